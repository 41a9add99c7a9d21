// Thin client over the bridge's JSON op protocol: request/reply correlation
// by id, message demultiplexing by topic, pluggable WebSocket factory so
// tests can run outside a browser.

import { BridgeFrame, MessageFrame } from "./protocol.js";

export interface WebSocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type WebSocketFactory = (url: string) => WebSocketLike;

export interface SubscribeOptions {
  type?: string;
  throttleMs?: number;
}

type MessageHandler = (msg: Record<string, unknown>, frame: MessageFrame) => void;

interface Pending {
  resolve: (frame: BridgeFrame) => void;
  reject: (err: Error) => void;
}

export class BridgeClient {
  private ws: WebSocketLike | null = null;
  private nextId = 1;
  private pending = new Map<string, Pending>();
  private handlers = new Map<string, Set<MessageHandler>>();
  onclose: (() => void) | null = null;
  onframe: ((frame: BridgeFrame) => void) | null = null;

  constructor(
    readonly url: string,
    private readonly factory: WebSocketFactory = (u) =>
      new (globalThis as { WebSocket: new (u: string) => WebSocketLike }).WebSocket(u),
  ) {}

  connect(timeoutMs = 5000): Promise<void> {
    return new Promise((resolve, reject) => {
      const ws = this.factory(this.url);
      const timer = setTimeout(() => {
        reject(new Error(`timed out connecting to ${this.url}`));
        ws.close();
      }, timeoutMs);
      ws.onopen = () => {
        clearTimeout(timer);
        this.ws = ws;
        resolve();
      };
      ws.onerror = () => {
        clearTimeout(timer);
        reject(new Error(`cannot reach ${this.url}`));
      };
      ws.onclose = () => {
        this.ws = null;
        const orphaned = [...this.pending.values()];
        this.pending.clear();
        for (const p of orphaned) p.reject(new Error("bridge connection closed"));
        this.onclose?.();
      };
      ws.onmessage = (ev) => this.dispatch(String(ev.data));
    });
  }

  get connected(): boolean {
    return this.ws !== null;
  }

  close(): void {
    this.ws?.close();
    this.ws = null;
  }

  private dispatch(raw: string): void {
    let frame: BridgeFrame;
    try {
      frame = JSON.parse(raw) as BridgeFrame;
    } catch {
      return;
    }
    this.onframe?.(frame);
    if (frame.op === "message") {
      const set = this.handlers.get(frame.topic);
      if (set) for (const handler of set) handler(frame.msg, frame);
      return;
    }
    const id = (frame as { id?: string }).id;
    if (id !== undefined && this.pending.has(id)) {
      const entry = this.pending.get(id)!;
      this.pending.delete(id);
      if (frame.op === "status" && frame.level === "error") {
        entry.reject(new Error(frame.text));
      } else {
        entry.resolve(frame);
      }
    }
  }

  send(op: Record<string, unknown>): void {
    if (!this.ws) throw new Error("not connected");
    this.ws.send(JSON.stringify(op));
  }

  request(op: Record<string, unknown>, timeoutMs = 10000): Promise<BridgeFrame> {
    const id = `c${this.nextId++}`;
    return new Promise<BridgeFrame>((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(id);
        reject(new Error(`no reply to ${String(op.op)} within ${timeoutMs} ms`));
      }, timeoutMs);
      this.pending.set(id, {
        resolve: (frame) => {
          clearTimeout(timer);
          resolve(frame);
        },
        reject: (err) => {
          clearTimeout(timer);
          reject(err);
        },
      });
      this.send({ ...op, id });
    });
  }

  async subscribe(topic: string, options: SubscribeOptions, handler: MessageHandler): Promise<() => Promise<void>> {
    let set = this.handlers.get(topic);
    const first = set === undefined;
    if (!set) {
      set = new Set();
      this.handlers.set(topic, set);
    }
    set.add(handler);
    if (first) {
      try {
        await this.request({
          op: "subscribe",
          topic,
          type: options.type,
          throttle_ms: options.throttleMs ?? 0,
        });
      } catch (err) {
        set.delete(handler);
        if (set.size === 0) this.handlers.delete(topic);
        throw err;
      }
    }
    return async () => {
      const current = this.handlers.get(topic);
      if (!current) return;
      current.delete(handler);
      if (current.size === 0) {
        this.handlers.delete(topic);
        if (this.connected) await this.request({ op: "unsubscribe", topic });
      }
    };
  }

  publish(topic: string, type: string | undefined, msg: unknown): void {
    this.send({ op: "publish", topic, type, msg });
  }

  async topics(): Promise<{ name: string; type: string }[]> {
    const frame = await this.request({ op: "topics" });
    if (frame.op !== "topics") throw new Error(`unexpected reply ${frame.op}`);
    return frame.topics;
  }

  async callService(service: string, type: string, args: unknown): Promise<Record<string, unknown>> {
    const frame = await this.request({ op: "call_service", service, type, args });
    if (frame.op !== "service_response") throw new Error(`unexpected reply ${frame.op}`);
    return frame.values;
  }

  async tfLookup(target: string, source: string) {
    const frame = await this.request({ op: "tf_lookup", target, source });
    if (frame.op !== "tf") throw new Error(`unexpected reply ${frame.op}`);
    return frame;
  }

  async status() {
    const frame = await this.request({ op: "status" });
    if (frame.op !== "status") throw new Error(`unexpected reply ${frame.op}`);
    return frame;
  }
}
