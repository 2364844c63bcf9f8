/** End-to-end checks against a live localhost service: streaming throughput,
 * fire-to-sample latency in frames, and chart/series value fidelity. The
 * service is spawned from the installed `biopsym` CLI. */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import WebSocket from "ws";

import { ApiClient } from "../src/api.js";
import { PoseControl } from "../src/input.js";
import type { Frame, ScenarioDict, ServerEvent } from "../src/protocol.js";
import { ChannelHandlers, SessionChannel, SocketLike } from "../src/stream.js";
import { FpsCounter, chartModel } from "../src/view.js";
import { verdict } from "./helpers.js";

const PORT = 8901 + Math.floor(Math.random() * 500);
const BASE = `http://127.0.0.1:${PORT}`;

let service: ChildProcess | null = null;
let serviceErr = "";
let dataDir = "";
const api = new ApiClient(BASE);

async function waitForHealth(timeoutMs: number): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/health`);
      if (res.ok) return;
    } catch {
      // not listening yet
    }
    if (Date.now() > deadline) {
      throw new Error(`service did not come up on ${BASE}\n${serviceErr}`);
    }
    await new Promise((r) => setTimeout(r, 250));
  }
}

beforeAll(async () => {
  dataDir = mkdtempSync(join(tmpdir(), "trainer-e2e-"));
  service = spawn("biopsym", ["serve", "--port", String(PORT), "--data-dir", dataDir], {
    stdio: ["ignore", "ignore", "pipe"],
  });
  service.stderr?.on("data", (chunk: Buffer) => (serviceErr += chunk.toString()));
  await waitForHealth(60_000);
}, 90_000);

afterAll(() => {
  service?.kill();
  if (dataDir) rmSync(dataDir, { recursive: true, force: true });
});

/** Bridge a `ws` socket to the channel's socket interface. */
function adapt(ws: WebSocket): SocketLike {
  const like: SocketLike = {
    send: (d) => ws.send(d),
    close: () => ws.close(),
    onmessage: null,
    onclose: null,
  };
  ws.on("message", (data, isBinary) => {
    if (!like.onmessage) return;
    if (isBinary) {
      const b = Buffer.isBuffer(data) ? data : Buffer.concat(data as Buffer[]);
      like.onmessage({ data: b.buffer.slice(b.byteOffset, b.byteOffset + b.byteLength) });
    } else {
      like.onmessage({ data: data.toString() });
    }
  });
  ws.on("close", () => like.onclose?.());
  return like;
}

function openChannel(url: string, handlers: ChannelHandlers): Promise<SessionChannel> {
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url);
    ws.once("error", reject);
    ws.once("open", () => resolve(new SessionChannel(adapt(ws), handlers)));
  });
}

async function newSession(): Promise<{ sessionId: string; userId: string; scenario: ScenarioDict }> {
  const { scenarios } = await api.scenarios();
  const scenario = scenarios.find((s) => s.id === "phantom-standard")!;
  const { user_id } = await api.createUser("e2e-trainee");
  const { session_id } = await api.createSession(user_id, scenario.id);
  return { sessionId: session_id, userId: user_id, scenario };
}

describe("live service", () => {
  it(
    "streams 256x256 frames at 20 fps or better through the pose loop",
    async () => {
      const { sessionId, scenario } = await newSession();
      const control = new PoseControl(scenario.probe);
      control.wheel(-1200); // insert to 24 mm of travel

      const WARMUP = 5; // first frames absorb service-side compile/cache cost
      const MEASURE = 100;
      const fpsMeter = new FpsCounter(2000);
      let count = 0;
      let tStart = 0;
      let tEnd = 0;
      let badFrame: string | null = null;
      let finish: () => void = () => {};
      const done = new Promise<void>((r) => (finish = r));

      const channel = await openChannel(api.streamUrl(sessionId), {
        onFrame: (frame: Frame) => {
          count += 1;
          const now = performance.now();
          fpsMeter.tick(now);
          if (frame.width !== 256 || frame.height !== 256) {
            badFrame = `${frame.width}x${frame.height}`;
          }
          if (count === WARMUP) tStart = now;
          if (count >= WARMUP + MEASURE) {
            tEnd = now;
            finish();
            return;
          }
          control.drag(count % 2 === 0 ? 2 : -2, count % 3 === 0 ? 1 : -1);
          channel.sendPose(control.deviceMsg());
        },
      });
      channel.sendPose(control.deviceMsg());
      await done;
      channel.close();

      const measured = (MEASURE * 1000) / (tEnd - tStart);
      const meterFps = fpsMeter.fps(tEnd);
      verdict(
        "ui-stream-throughput",
        badFrame === null && measured >= 20 && meterFps >= 20,
        `${measured.toFixed(0)} fps at 256x256, floor 20`,
      );
      expect(badFrame).toBeNull();
      expect(measured).toBeGreaterThanOrEqual(20);
      // the UI's own meter agrees over its rolling window
      expect(meterFps).toBeGreaterThanOrEqual(20);
    },
    60_000,
  );

  it(
    "renders a fired core within one frame and scores the session end to end",
    async () => {
      const { sessionId, userId, scenario } = await newSession();
      const control = new PoseControl(scenario.probe);
      control.wheel(-1250); // 25 mm insertion, aimed straight at the gland

      const events: ServerEvent[] = [];
      let framesSinceFire = -1; // -1 until the fire goes out
      let framesWhenSampleArrived = -1;
      let frames = 0;
      let finish: () => void = () => {};
      const done = new Promise<void>((r) => (finish = r));

      const channel = await openChannel(api.streamUrl(sessionId), {
        onFrame: () => {
          frames += 1;
          if (framesSinceFire >= 0 && framesWhenSampleArrived < 0) framesSinceFire += 1;
          if (frames === 3) {
            // fire while the next pose is in flight: worst case for latency
            channel.sendPose(control.deviceMsg());
            framesSinceFire = 0;
            channel.fire();
            return;
          }
          if (frames < 6) channel.sendPose(control.deviceMsg());
        },
        onEvent: (ev) => {
          events.push(ev);
          if (ev.type === "sample" && framesWhenSampleArrived < 0) {
            framesWhenSampleArrived = framesSinceFire;
          }
          if (ev.type === "result") finish();
        },
      });
      channel.sendPose(control.deviceMsg());

      // end the session once the fired sample has come back
      const sampleSeen = new Promise<void>((resolve) => {
        const poll = setInterval(() => {
          if (framesWhenSampleArrived >= 0) {
            clearInterval(poll);
            resolve();
          }
        }, 10);
      });
      await sampleSeen;
      channel.end();
      await done;
      channel.close();

      // the sample rendered within one frame of the fire action
      verdict(
        "ui-fire-latency",
        framesWhenSampleArrived >= 0 && framesWhenSampleArrived <= 1,
        `sample event after ${framesWhenSampleArrived} frame(s), bound 1`,
      );
      expect(framesWhenSampleArrived).toBeGreaterThanOrEqual(0);
      expect(framesWhenSampleArrived).toBeLessThanOrEqual(1);

      const sample = events.find((e) => e.type === "sample");
      const result = events.find((e) => e.type === "result");
      if (sample?.type !== "sample" || result?.type !== "result") {
        throw new Error("expected sample and result events");
      }
      expect(sample.sample.order_index).toBe(0);
      expect(result.result.samples.length).toBe(1);
      expect(result.score).toBeGreaterThanOrEqual(0);
      expect(result.score).toBeLessThanOrEqual(1);

      // the persisted replay matches what the live channel saw
      const record = await api.replay(sessionId);
      expect(record.samples.length).toBe(1);
      expect(JSON.stringify(record.samples[0])).toBe(JSON.stringify(sample.sample));
      expect(record.score).toBeCloseTo(result.score, 12);

      // chart values are byte-identical to the series endpoint payload
      const raw = await (await fetch(`${BASE}/users/${userId}/series?kind=simulation`)).text();
      const parsed = JSON.parse(raw) as { kind: string; series: [number, number][] };
      const model = chartModel(parsed.series, 320, 120);
      const match = JSON.stringify(model.values) === JSON.stringify(parsed.series);
      verdict("ui-chart-byte-match", match, "chart values identical to live series payload");
      expect(match).toBe(true);
      expect(model.values.length).toBe(1);
      expect(model.values[0][1]).toBeCloseTo(result.score, 12);
    },
    60_000,
  );
});
