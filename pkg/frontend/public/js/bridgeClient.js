// Thin client over the bridge's JSON op protocol: request/reply correlation
// by id, message demultiplexing by topic, pluggable WebSocket factory so
// tests can run outside a browser.
export class BridgeClient {
    constructor(url, factory = (u) => new globalThis.WebSocket(u)) {
        this.url = url;
        this.factory = factory;
        this.ws = null;
        this.nextId = 1;
        this.pending = new Map();
        this.handlers = new Map();
        this.onclose = null;
        this.onframe = null;
    }
    connect(timeoutMs = 5000) {
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
                for (const p of orphaned)
                    p.reject(new Error("bridge connection closed"));
                this.onclose?.();
            };
            ws.onmessage = (ev) => this.dispatch(String(ev.data));
        });
    }
    get connected() {
        return this.ws !== null;
    }
    close() {
        this.ws?.close();
        this.ws = null;
    }
    dispatch(raw) {
        let frame;
        try {
            frame = JSON.parse(raw);
        }
        catch {
            return;
        }
        this.onframe?.(frame);
        if (frame.op === "message") {
            const set = this.handlers.get(frame.topic);
            if (set)
                for (const handler of set)
                    handler(frame.msg, frame);
            return;
        }
        const id = frame.id;
        if (id !== undefined && this.pending.has(id)) {
            const entry = this.pending.get(id);
            this.pending.delete(id);
            if (frame.op === "status" && frame.level === "error") {
                entry.reject(new Error(frame.text));
            }
            else {
                entry.resolve(frame);
            }
        }
    }
    send(op) {
        if (!this.ws)
            throw new Error("not connected");
        this.ws.send(JSON.stringify(op));
    }
    request(op, timeoutMs = 10000) {
        const id = `c${this.nextId++}`;
        return new Promise((resolve, reject) => {
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
    async subscribe(topic, options, handler) {
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
            }
            catch (err) {
                set.delete(handler);
                if (set.size === 0)
                    this.handlers.delete(topic);
                throw err;
            }
        }
        return async () => {
            const current = this.handlers.get(topic);
            if (!current)
                return;
            current.delete(handler);
            if (current.size === 0) {
                this.handlers.delete(topic);
                if (this.connected)
                    await this.request({ op: "unsubscribe", topic });
            }
        };
    }
    publish(topic, type, msg) {
        this.send({ op: "publish", topic, type, msg });
    }
    async topics() {
        const frame = await this.request({ op: "topics" });
        if (frame.op !== "topics")
            throw new Error(`unexpected reply ${frame.op}`);
        return frame.topics;
    }
    async callService(service, type, args) {
        const frame = await this.request({ op: "call_service", service, type, args });
        if (frame.op !== "service_response")
            throw new Error(`unexpected reply ${frame.op}`);
        return frame.values;
    }
    async tfLookup(target, source) {
        const frame = await this.request({ op: "tf_lookup", target, source });
        if (frame.op !== "tf")
            throw new Error(`unexpected reply ${frame.op}`);
        return frame;
    }
    async status() {
        const frame = await this.request({ op: "status" });
        if (frame.op !== "status")
            throw new Error(`unexpected reply ${frame.op}`);
        return frame;
    }
}
