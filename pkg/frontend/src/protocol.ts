// JSON op protocol spoken by the bridge. Every request carrying an id gets
// at least one reply with the same id; errors arrive as status frames.

export interface StatusFrame {
  op: "status";
  level: "info" | "error";
  text: string;
  id?: string;
  subscriptions?: number;
  connectionSubscriptions?: number;
  drops?: number;
  tfFrames?: string[];
}

export interface MessageFrame {
  op: "message";
  topic: string;
  msg: Record<string, unknown>;
  recvStampMs: number;
}

export interface TopicsFrame {
  op: "topics";
  id?: string;
  topics: { name: string; type: string }[];
}

export interface ServiceResponseFrame {
  op: "service_response";
  id?: string;
  service: string;
  ok: boolean;
  values: Record<string, unknown>;
}

export interface TfFrame {
  op: "tf";
  id?: string;
  target: string;
  source: string;
  translation: { x: number; y: number; z: number };
  rotation: { x: number; y: number; z: number; w: number };
}

export type BridgeFrame =
  | StatusFrame
  | MessageFrame
  | TopicsFrame
  | ServiceResponseFrame
  | TfFrame;

export interface Twist {
  linear: { x: number; y: number; z: number };
  angular: { x: number; y: number; z: number };
}

export interface LaserScan {
  angle_min: number;
  angle_max: number;
  angle_increment: number;
  range_min: number;
  range_max: number;
  ranges: number[];
  intensities?: number[];
}

export interface OccupancyGrid {
  info: {
    resolution: number;
    width: number;
    height: number;
    origin: { position: { x: number; y: number; z: number } };
  };
  data: number[];
}

export function zeroTwist(): Twist {
  return { linear: { x: 0, y: 0, z: 0 }, angular: { x: 0, y: 0, z: 0 } };
}
