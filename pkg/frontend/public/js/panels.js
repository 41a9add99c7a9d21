// Panel bookkeeping, DOM-free: one bridge subscription per open panel,
// pause drops rendering but keeps the subscription, close unsubscribes.
export class Panel {
    constructor(topic, type, view) {
        this.topic = topic;
        this.type = type;
        this.view = view;
        this.paused = false;
        this.received = 0;
        this.hz = 0;
        this.stamps = [];
        this.unsubscribe = null;
    }
    async open(client, throttleMs) {
        this.unsubscribe = await client.subscribe(this.topic, { type: this.type, throttleMs }, (msg, frame) => this.onMessage(msg, frame));
    }
    onMessage(msg, frame) {
        this.received++;
        const now = frame.recvStampMs;
        this.stamps.push(now);
        while (this.stamps.length > 1 && now - this.stamps[0] > 5000)
            this.stamps.shift();
        if (this.stamps.length > 1) {
            const span = (this.stamps[this.stamps.length - 1] - this.stamps[0]) / 1000;
            this.hz = span > 0 ? (this.stamps.length - 1) / span : 0;
        }
        if (this.paused)
            return;
        try {
            this.view.render(msg, frame);
        }
        catch (err) {
            this.view.showError?.(String(err)); // previous frame stays on screen
        }
    }
    async close() {
        if (this.unsubscribe) {
            const un = this.unsubscribe;
            this.unsubscribe = null;
            await un();
        }
    }
}
export class PanelManager {
    constructor(client, defaultThrottleMs = 200) {
        this.client = client;
        this.defaultThrottleMs = defaultThrottleMs;
        this.panels = new Map();
    }
    get openTopics() {
        return [...this.panels.keys()];
    }
    panel(topic) {
        return this.panels.get(topic);
    }
    async open(topic, type, view, throttleMs) {
        if (this.panels.has(topic))
            return this.panels.get(topic);
        const panel = new Panel(topic, type, view);
        await panel.open(this.client, throttleMs ?? this.defaultThrottleMs);
        this.panels.set(topic, panel);
        return panel;
    }
    async close(topic) {
        const panel = this.panels.get(topic);
        if (!panel)
            return;
        this.panels.delete(topic);
        await panel.close();
    }
    async closeAll() {
        for (const topic of this.openTopics)
            await this.close(topic);
    }
}
