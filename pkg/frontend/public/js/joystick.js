// Virtual joystick core, DOM-free for testing. Normalized deflection
// (u right, v up) in [-1,1]^2 maps to Twist {linear.x = v*maxLinear,
// angular.z = -u*maxAngular}; publishes at a fixed rate while engaged and
// exactly one zero Twist on release.
import { zeroTwist } from "./protocol.js";
const clamp = (x) => Math.max(-1, Math.min(1, x));
export function deflectionToTwist(u, v, binding) {
    const twist = zeroTwist();
    twist.linear.x = clamp(v) * binding.maxLinear;
    twist.angular.z = -clamp(u) * binding.maxAngular;
    return twist;
}
export class JoystickEngine {
    constructor(binding, publish, scheduler = globalThis) {
        this.binding = binding;
        this.publish = publish;
        this.scheduler = scheduler;
        this.timer = null;
        this.u = 0;
        this.v = 0;
        this.disabled = false;
        this.published = 0;
    }
    get engaged() {
        return this.timer !== null;
    }
    engage(u, v) {
        if (this.disabled || this.timer !== null)
            return;
        this.u = u;
        this.v = v;
        const interval = 1000 / this.binding.rateHz;
        this.tick();
        this.timer = this.scheduler.setInterval(() => this.tick(), interval);
    }
    move(u, v) {
        this.u = u;
        this.v = v;
    }
    release() {
        if (this.timer === null)
            return;
        this.scheduler.clearInterval(this.timer);
        this.timer = null;
        this.send(zeroTwist()); // exactly one trailing zero
    }
    // Bridge dropped: stop the stream, try to leave a zero behind, refuse
    // further engagement until re-enabled.
    disconnected() {
        if (this.timer !== null) {
            this.scheduler.clearInterval(this.timer);
            this.timer = null;
            try {
                this.send(zeroTwist());
            }
            catch {
                // the zero is best-effort here; the publisher is gone
            }
        }
        this.disabled = true;
    }
    enable() {
        this.disabled = false;
    }
    tick() {
        this.send(deflectionToTwist(this.u, this.v, this.binding));
    }
    send(msg) {
        this.publish(this.binding.topic, msg);
        this.published++;
    }
}
