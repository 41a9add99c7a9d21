// Spawns the loopback Python stack (master stub + bridge + counter node)
// and hands back its endpoints.

import { ChildProcess, spawn } from "node:child_process";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

const HERE = path.dirname(fileURLToPath(import.meta.url));

export interface Stack {
  ws: string;
  master: string;
  proc: ChildProcess;
  stop(): Promise<void>;
}

export async function spawnStack(): Promise<Stack> {
  const script = path.join(HERE, "stack.py");
  const proc = spawn("python3", [script], { stdio: ["pipe", "pipe", "inherit"] });
  const first = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("stack.py produced no endpoint line")), 20000);
    let buffer = "";
    proc.stdout!.on("data", (chunk: Buffer) => {
      buffer += chunk.toString();
      const nl = buffer.indexOf("\n");
      if (nl >= 0) {
        clearTimeout(timer);
        resolve(buffer.slice(0, nl));
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`stack.py exited early with code ${code}`));
    });
  });
  const endpoints = JSON.parse(first) as { ws: string; master: string };
  return {
    ...endpoints,
    proc,
    async stop() {
      proc.stdin!.end();
      await new Promise<void>((resolve) => {
        const timer = setTimeout(() => {
          proc.kill("SIGKILL");
          resolve();
        }, 10000);
        proc.on("exit", () => {
          clearTimeout(timer);
          resolve();
        });
      });
    },
  };
}
