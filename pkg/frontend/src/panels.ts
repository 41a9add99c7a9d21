// Panel bookkeeping, DOM-free: one bridge subscription per open panel,
// pause drops rendering but keeps the subscription, close unsubscribes.

import { BridgeClient } from "./bridgeClient.js";
import { MessageFrame } from "./protocol.js";

export interface PanelView {
  render(msg: Record<string, unknown>, frame: MessageFrame): void;
  showError?(text: string): void;
}

export class Panel {
  paused = false;
  received = 0;
  hz = 0;
  private stamps: number[] = [];
  private unsubscribe: (() => Promise<void>) | null = null;

  constructor(readonly topic: string, readonly type: string | undefined, private view: PanelView) {}

  async open(client: BridgeClient, throttleMs: number): Promise<void> {
    this.unsubscribe = await client.subscribe(
      this.topic,
      { type: this.type, throttleMs },
      (msg, frame) => this.onMessage(msg, frame),
    );
  }

  private onMessage(msg: Record<string, unknown>, frame: MessageFrame): void {
    this.received++;
    const now = frame.recvStampMs;
    this.stamps.push(now);
    while (this.stamps.length > 1 && now - this.stamps[0] > 5000) this.stamps.shift();
    if (this.stamps.length > 1) {
      const span = (this.stamps[this.stamps.length - 1] - this.stamps[0]) / 1000;
      this.hz = span > 0 ? (this.stamps.length - 1) / span : 0;
    }
    if (this.paused) return;
    try {
      this.view.render(msg, frame);
    } catch (err) {
      this.view.showError?.(String(err)); // previous frame stays on screen
    }
  }

  async close(): Promise<void> {
    if (this.unsubscribe) {
      const un = this.unsubscribe;
      this.unsubscribe = null;
      await un();
    }
  }
}

export class PanelManager {
  private panels = new Map<string, Panel>();

  constructor(private client: BridgeClient, private defaultThrottleMs = 200) {}

  get openTopics(): string[] {
    return [...this.panels.keys()];
  }

  panel(topic: string): Panel | undefined {
    return this.panels.get(topic);
  }

  async open(topic: string, type: string | undefined, view: PanelView, throttleMs?: number): Promise<Panel> {
    if (this.panels.has(topic)) return this.panels.get(topic)!;
    const panel = new Panel(topic, type, view);
    await panel.open(this.client, throttleMs ?? this.defaultThrottleMs);
    this.panels.set(topic, panel);
    return panel;
  }

  async close(topic: string): Promise<void> {
    const panel = this.panels.get(topic);
    if (!panel) return;
    this.panels.delete(topic);
    await panel.close();
  }

  async closeAll(): Promise<void> {
    for (const topic of this.openTopics) await this.close(topic);
  }
}
