// Virtual joystick core, DOM-free for testing. Normalized deflection
// (u right, v up) in [-1,1]^2 maps to Twist {linear.x = v*maxLinear,
// angular.z = -u*maxAngular}; publishes at a fixed rate while engaged and
// exactly one zero Twist on release.

import { Twist, zeroTwist } from "./protocol.js";

export interface JoystickBinding {
  topic: string;
  maxLinear: number;   // m/s at full forward deflection
  maxAngular: number;  // rad/s at full left deflection
  rateHz: number;
}

type PublishFn = (topic: string, msg: Twist) => void;
type Scheduler = {
  setInterval(fn: () => void, ms: number): unknown;
  clearInterval(handle: unknown): void;
};

const clamp = (x: number) => Math.max(-1, Math.min(1, x));

export function deflectionToTwist(u: number, v: number, binding: JoystickBinding): Twist {
  const twist = zeroTwist();
  twist.linear.x = clamp(v) * binding.maxLinear;
  twist.angular.z = -clamp(u) * binding.maxAngular;
  return twist;
}

export class JoystickEngine {
  private timer: unknown = null;
  private u = 0;
  private v = 0;
  private disabled = false;
  published = 0;

  constructor(
    readonly binding: JoystickBinding,
    private readonly publish: PublishFn,
    private readonly scheduler: Scheduler = globalThis as unknown as Scheduler,
  ) {}

  get engaged(): boolean {
    return this.timer !== null;
  }

  engage(u: number, v: number): void {
    if (this.disabled || this.timer !== null) return;
    this.u = u;
    this.v = v;
    const interval = 1000 / this.binding.rateHz;
    this.tick();
    this.timer = this.scheduler.setInterval(() => this.tick(), interval);
  }

  move(u: number, v: number): void {
    this.u = u;
    this.v = v;
  }

  release(): void {
    if (this.timer === null) return;
    this.scheduler.clearInterval(this.timer);
    this.timer = null;
    this.send(zeroTwist()); // exactly one trailing zero
  }

  // Bridge dropped: stop the stream, try to leave a zero behind, refuse
  // further engagement until re-enabled.
  disconnected(): void {
    if (this.timer !== null) {
      this.scheduler.clearInterval(this.timer);
      this.timer = null;
      try {
        this.send(zeroTwist());
      } catch {
        // the zero is best-effort here; the publisher is gone
      }
    }
    this.disabled = true;
  }

  enable(): void {
    this.disabled = false;
  }

  private tick(): void {
    this.send(deflectionToTwist(this.u, this.v, this.binding));
  }

  private send(msg: Twist): void {
    this.publish(this.binding.topic, msg);
    this.published++;
  }
}
