/** Playback of a persisted session: step through the fired cores in
 * timestamp order and page through stored golden frames. */

import { Frame, SampleDict, SessionRecordDict, decodeFrame } from "./protocol.js";

export interface ReplayStep {
  index: number;
  sample: SampleDict;
  /** Zones hit by cores up to and including this one. */
  zonesSoFar: number[];
}

/** Flatten a session record into per-core steps, ordered by fire time
 * (ties broken by order index, matching how the protocol was scored). */
export function replaySteps(record: SessionRecordDict): ReplayStep[] {
  const samples = [...record.samples].sort(
    (a, b) => a.timestamp_ms - b.timestamp_ms || a.order_index - b.order_index,
  );
  const seen = new Set<number>();
  return samples.map((sample, index) => {
    for (const z of sample.zones) seen.add(z);
    return { index, sample, zonesSoFar: [...seen].sort((a, b) => a - b) };
  });
}

/** Pages through a list of stored binary frames (golden-frame playback). */
export class FramePlayer {
  private cursor = 0;
  private readonly frames: Frame[];

  constructor(buffers: ArrayBuffer[]) {
    this.frames = buffers.map(decodeFrame);
  }

  get length(): number {
    return this.frames.length;
  }

  get position(): number {
    return this.cursor;
  }

  current(): Frame {
    if (this.frames.length === 0) throw new Error("no frames loaded");
    return this.frames[this.cursor];
  }

  seek(i: number): Frame {
    if (i < 0 || i >= this.frames.length) {
      throw new Error(`frame index ${i} out of range 0..${this.frames.length - 1}`);
    }
    this.cursor = i;
    return this.current();
  }

  next(): Frame {
    return this.seek(Math.min(this.cursor + 1, this.frames.length - 1));
  }

  prev(): Frame {
    return this.seek(Math.max(this.cursor - 1, 0));
  }
}
