// End-to-end tests against the real Python stack: a scripted master, the
// bridge, and a counter node that loops /cmd_vel back as /cmd_vel_echo over
// TCPROS. Everything here talks through the websocket protocol only.

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { BridgeClient } from "../src/bridgeClient.js";
import { JoystickEngine } from "../src/joystick.js";
import { PanelManager } from "../src/panels.js";
import { Twist } from "../src/protocol.js";
import { NodeWebSocket } from "./support/nodeWebSocket.js";
import { Stack, spawnStack } from "./support/spawnStack.js";

let stack: Stack;

const wsFactory = (url: string) => new NodeWebSocket(url);

function connect(): Promise<BridgeClient> {
  const client = new BridgeClient(stack.ws, wsFactory);
  return client.connect(15000).then(() => client);
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

beforeAll(async () => {
  stack = await spawnStack();
}, 60000);

afterAll(async () => {
  await stack?.stop();
});

describe("browser flow", () => {
  it("lists graph topics with types", async () => {
    const client = await connect();
    try {
      const topics = await client.topics();
      expect(topics).toContainEqual({ name: "/cmd_vel_echo", type: "geometry_msgs/Twist" });
    } finally {
      client.close();
    }
  });

  it("tf lookup matches the stack's frame chain", async () => {
    const client = await connect();
    try {
      const tf = await client.tfLookup("map", "laser");
      // map->base_link (1,2,0) composed with base_link->laser (0,0.5,0)
      expect(tf.translation).toEqual({ x: 1.0, y: 2.5, z: 0.0 });
      expect(tf.rotation.w).toBe(1.0);
      const status = await client.status();
      expect(status.tfFrames).toContain("laser");
    } finally {
      client.close();
    }
  });
});

describe("joystick end-to-end", () => {
  it(
    "10 Hz held 3 s delivers 30±3 twists then exactly one trailing zero",
    async () => {
      const observer = await connect();
      const driver = await connect();
      try {
        const received: Twist[] = [];
        await observer.subscribe("/cmd_vel_echo", { type: "geometry_msgs/Twist" }, (msg) => {
          received.push(msg as unknown as Twist);
        });
        // joystick publishes through the bridge; give the counter node's
        // publisher a beat to pick up the bridge's subscription
        driver.publish("/cmd_vel", "geometry_msgs/Twist", {
          linear: { x: 0 }, angular: { z: 0 },
        });
        await sleep(1500);
        received.length = 0;

        const joy = new JoystickEngine(
          { topic: "/cmd_vel", maxLinear: 0.5, maxAngular: 1.0, rateHz: 10 },
          (topic, msg) => driver.publish(topic, "geometry_msgs/Twist", msg),
          globalThis,
        );
        joy.engage(0, 1); // full forward
        await sleep(3000);
        joy.release();
        await sleep(1500); // drain the loopback path

        const nonzero = received.filter((t) => t.linear.x !== 0 || t.angular.z !== 0);
        const zeros = received.filter((t) => t.linear.x === 0 && t.angular.z === 0);
        expect(nonzero.length).toBeGreaterThanOrEqual(27);
        expect(nonzero.length).toBeLessThanOrEqual(33);
        expect(zeros.length).toBe(1);
        // the zero is the last message observed
        const last = received[received.length - 1];
        expect(last.linear.x).toBe(0);
        expect(last.angular.z).toBe(0);
        expect(nonzero.every((t) => t.linear.x === 0.5)).toBe(true);
      } finally {
        observer.close();
        driver.close();
      }
    },
    60000,
  );
});

describe("subscription hygiene", () => {
  it("opening and closing 5 panels leaves zero bridge-side subscriptions", async () => {
    const client = await connect();
    try {
      const manager = new PanelManager(client, 0);
      const view = { render() {} };
      for (let i = 0; i < 5; i++) {
        await manager.open(`/hygiene_${i}`, "std_msgs/Int32", view);
      }
      let status = await client.status();
      expect(status.subscriptions).toBe(5);
      expect(status.connectionSubscriptions).toBe(5);
      await manager.closeAll();
      status = await client.status();
      expect(status.subscriptions).toBe(0);
      expect(status.connectionSubscriptions).toBe(0);
    } finally {
      client.close();
    }
  }, 60000);

  it("a dropped connection also releases its subscriptions", async () => {
    const a = await connect();
    const b = await connect();
    try {
      await a.subscribe("/drop_me", { type: "std_msgs/Int32" }, () => {});
      a.close();
      await sleep(1000);
      const status = await b.status();
      expect(status.subscriptions).toBe(0);
    } finally {
      b.close();
    }
  }, 60000);
});
