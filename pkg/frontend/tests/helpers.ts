import { createHash } from "node:crypto";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";

export function fixturePath(name: string): string {
  return fileURLToPath(new URL(`./fixtures/${name}`, import.meta.url));
}

export function fixtureText(name: string): string {
  return readFileSync(fixturePath(name), "utf-8");
}

export function fixtureJson<T>(name: string): T {
  return JSON.parse(fixtureText(name)) as T;
}

/** Fixture file as a tight ArrayBuffer (no Buffer pool slack). */
export function fixtureBuffer(name: string): ArrayBuffer {
  const b = readFileSync(fixturePath(name));
  return b.buffer.slice(b.byteOffset, b.byteOffset + b.byteLength) as ArrayBuffer;
}

export function sha256Hex(buf: ArrayBuffer): string {
  return createHash("sha256").update(new Uint8Array(buf)).digest("hex");
}

/** Print a release-gate verdict line (mirrors the service test suite). */
export function verdict(name: string, ok: boolean, detail: string): void {
  console.log(`[acceptance] ${name}: ${ok ? "PASS" : "FAIL"} (${detail})`);
}

/** Synthesize a wire frame: LE u32 w | u32 h | f32 mm/px | pixels. */
export function makeFrameBytes(
  width: number,
  height: number,
  mmPerPx: number,
  fill?: (i: number) => number,
): ArrayBuffer {
  const buf = new ArrayBuffer(12 + width * height);
  const view = new DataView(buf);
  view.setUint32(0, width, true);
  view.setUint32(4, height, true);
  view.setFloat32(8, mmPerPx, true);
  const px = new Uint8Array(buf, 12);
  for (let i = 0; i < px.length; i++) px[i] = fill ? fill(i) & 0xff : 0;
  return buf;
}

export interface SessionFixture {
  scenario_id: string;
  session_id: string;
  frame_hashes: { main: string; coronal: string }[];
  fires: { type: string; sample: import("../src/protocol.js").SampleDict }[];
  result: {
    type: string;
    result: import("../src/protocol.js").ResultDict;
    score: number;
    components: Record<string, number>;
  };
}
