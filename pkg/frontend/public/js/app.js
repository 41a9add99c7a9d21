// Browser console wiring: connect form, topic browser, echo/scan/grid
// panels, tf inspector, and the teleop joystick.
import { BridgeClient } from "./bridgeClient.js";
import { GridSizeMismatch, gridCaption, renderGrid } from "./gridRenderer.js";
import { JoystickEngine, deflectionToTwist } from "./joystick.js";
import { PanelManager } from "./panels.js";
import { makeRaster } from "./raster.js";
import { renderScan } from "./scanRenderer.js";
const $ = (id) => {
    const el = document.getElementById(id);
    if (!el)
        throw new Error(`missing element #${id}`);
    return el;
};
let client = null;
let panels = null;
let joystick = null;
let reconnectDelay = 500;
let wantConnected = false;
function setBanner(text, kind) {
    const banner = $("banner");
    banner.textContent = text;
    banner.className = kind;
}
function defaultBridgeUrl() {
    const here = new URL(window.location.href);
    return `ws://${here.host}/`;
}
async function connect() {
    const url = $("bridge-url").value || defaultBridgeUrl();
    wantConnected = true;
    const next = new BridgeClient(url);
    try {
        await next.connect();
    }
    catch (err) {
        setBanner(`connect failed: ${err}; retrying`, "bad");
        scheduleReconnect();
        return;
    }
    client = next;
    panels = new PanelManager(client);
    reconnectDelay = 500;
    setBanner(`connected to ${url}`, "ok");
    client.onclose = () => {
        setBanner("bridge connection lost; retrying", "bad");
        joystick?.disconnected();
        client = null;
        panels = null;
        clearPanelsDom();
        scheduleReconnect();
    };
    bindJoystick();
    await refreshTopics();
}
function scheduleReconnect() {
    if (!wantConnected)
        return;
    const delay = reconnectDelay;
    reconnectDelay = Math.min(reconnectDelay * 2, 8000);
    window.setTimeout(() => {
        if (wantConnected && client === null)
            void connect();
    }, delay);
}
async function refreshTopics() {
    if (!client)
        return;
    const listEl = $("topics");
    const topics = await client.topics();
    listEl.innerHTML = "";
    for (const { name, type } of topics) {
        const row = document.createElement("li");
        const button = document.createElement("button");
        button.textContent = name;
        button.title = `open ${name} [${type}]`;
        button.onclick = () => void openPanel(name, type);
        const typeEl = document.createElement("span");
        typeEl.className = "topic-type";
        typeEl.textContent = type;
        const hzEl = document.createElement("span");
        hzEl.className = "topic-hz";
        hzEl.dataset.topic = name;
        hzEl.textContent = "";
        row.append(button, typeEl, hzEl);
        listEl.appendChild(row);
    }
}
window.setInterval(() => {
    if (!panels)
        return;
    for (const el of document.querySelectorAll(".topic-hz")) {
        const panel = panels.panel(el.dataset.topic ?? "");
        el.textContent = panel ? `${panel.hz.toFixed(1)} Hz` : "";
    }
}, 1000);
function clearPanelsDom() {
    $("panels").innerHTML = "";
}
async function openPanel(topic, type) {
    if (!client || !panels || panels.panel(topic))
        return;
    const host = document.createElement("section");
    host.className = "panel";
    const head = document.createElement("header");
    const title = document.createElement("span");
    title.textContent = `${topic} [${type}]`;
    const pauseBtn = document.createElement("button");
    pauseBtn.textContent = "pause";
    const closeBtn = document.createElement("button");
    closeBtn.textContent = "close";
    const errEl = document.createElement("div");
    errEl.className = "panel-error";
    head.append(title, pauseBtn, closeBtn);
    host.append(head, errEl);
    $("panels").appendChild(host);
    let view;
    if (type === "sensor_msgs/LaserScan" || type === "nav_msgs/OccupancyGrid") {
        const canvas = document.createElement("canvas");
        canvas.width = 320;
        canvas.height = 320;
        const caption = document.createElement("div");
        caption.className = "caption";
        host.append(canvas, caption);
        const ctx = canvas.getContext("2d");
        const raster = makeRaster(canvas.width, canvas.height);
        view = {
            render(msg) {
                errEl.textContent = "";
                if (type === "sensor_msgs/LaserScan") {
                    const stats = renderScan(msg, raster);
                    caption.textContent = `${stats.drawn} points, ${(1 / stats.metersPerPixel).toFixed(1)} px/m`;
                }
                else {
                    try {
                        renderGrid(msg, raster);
                        caption.textContent = gridCaption(msg);
                    }
                    catch (err) {
                        if (err instanceof GridSizeMismatch) {
                            errEl.textContent = String(err.message);
                            return;
                        }
                        throw err;
                    }
                }
                ctx.putImageData(new ImageData(raster.data, raster.width, raster.height), 0, 0);
            },
            showError(text) {
                errEl.textContent = text;
            },
        };
    }
    else {
        const pre = document.createElement("pre");
        host.appendChild(pre);
        view = {
            render(msg) {
                errEl.textContent = "";
                pre.textContent = JSON.stringify(msg, null, 2);
            },
            showError(text) {
                errEl.textContent = text;
            },
        };
    }
    const panel = await panels.open(topic, type, view);
    pauseBtn.onclick = () => {
        panel.paused = !panel.paused;
        pauseBtn.textContent = panel.paused ? "resume" : "pause";
    };
    closeBtn.onclick = () => {
        void panels?.close(topic);
        host.remove();
    };
}
// ----- tf inspector: poll at 2 Hz
window.setInterval(async () => {
    if (!client)
        return;
    const target = $("tf-target").value;
    const source = $("tf-source").value;
    const out = $("tf-result");
    if (!target || !source)
        return;
    try {
        const tf = await client.tfLookup(target, source);
        const t = tf.translation;
        const r = tf.rotation;
        out.textContent =
            `t = (${t.x.toFixed(3)}, ${t.y.toFixed(3)}, ${t.z.toFixed(3)})\n` +
                `q = (${r.x.toFixed(3)}, ${r.y.toFixed(3)}, ${r.z.toFixed(3)}, ${r.w.toFixed(3)})`;
    }
    catch (err) {
        out.textContent = String(err);
    }
    try {
        const status = await client.status();
        $("tf-frames").textContent = (status.tfFrames ?? []).join(", ") || "(none)";
    }
    catch {
        // leave the old frame list
    }
}, 500);
// ----- joystick
function bindJoystick() {
    if (!client)
        return;
    const topic = $("joy-topic").value || "/cmd_vel";
    const maxLinear = Number($("joy-max-linear").value) || 0.5;
    const maxAngular = Number($("joy-max-angular").value) || 1.0;
    const bridge = client;
    joystick = new JoystickEngine({ topic, maxLinear, maxAngular, rateHz: 10 }, (t, msg) => bridge.publish(t, "geometry_msgs/Twist", msg), window);
    joystick.enable();
}
function setupJoystickDom() {
    const pad = $("joy-pad");
    const stick = $("joy-stick");
    const radius = 60;
    function deflection(ev) {
        const rect = pad.getBoundingClientRect();
        const cx = rect.left + rect.width / 2;
        const cy = rect.top + rect.height / 2;
        const u = Math.max(-1, Math.min(1, (ev.clientX - cx) / radius));
        const v = Math.max(-1, Math.min(1, -(ev.clientY - cy) / radius));
        stick.style.transform = `translate(${u * radius * 0.6}px, ${-v * radius * 0.6}px)`;
        return { u, v };
    }
    pad.addEventListener("pointerdown", (ev) => {
        pad.setPointerCapture(ev.pointerId);
        const { u, v } = deflection(ev);
        joystick?.engage(u, v);
    });
    pad.addEventListener("pointermove", (ev) => {
        if (joystick?.engaged) {
            const { u, v } = deflection(ev);
            joystick.move(u, v);
        }
    });
    const end = () => {
        stick.style.transform = "";
        joystick?.release();
    };
    pad.addEventListener("pointerup", end);
    pad.addEventListener("pointercancel", end);
    const preview = $("joy-preview");
    window.setInterval(() => {
        if (!joystick)
            return;
        const t = deflectionToTwist(0, 0, joystick.binding);
        preview.textContent = `${joystick.binding.topic} @10 Hz, max ${joystick.binding.maxLinear} m/s / ${joystick.binding.maxAngular} rad/s (sent ${joystick.published})`;
        void t;
    }, 500);
}
$("connect-btn").onclick = () => void connect();
$("refresh-btn").onclick = () => void refreshTopics();
$("bridge-url").value = defaultBridgeUrl();
setupJoystickDom();
setBanner("not connected", "bad");
