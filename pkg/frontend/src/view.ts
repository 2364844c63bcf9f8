/** Pure view-model projections: frame bytes to RGBA, the needle-guide
 * overlay in pixel coordinates, the 12-zone schematic, the progress chart,
 * and a frame-rate counter. Nothing in here touches the DOM. */

import type { Frame } from "./protocol.js";

/** Grayscale frame to straight-alpha RGBA, optionally flipped vertically
 * (the service sends the probe tip at row 0; flipped display puts the
 * transducer at the bottom of the screen like a conventional TRUS view). */
// return type inferred so the array stays ArrayBuffer-backed for ImageData
export function frameToRGBA(frame: Frame, flipY = false) {
  const { width, height, pixels } = frame;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let j = 0; j < height; j++) {
    const srcRow = flipY ? height - 1 - j : j;
    for (let i = 0; i < width; i++) {
      const g = pixels[srcRow * width + i];
      const o = (j * width + i) * 4;
      out[o] = g;
      out[o + 1] = g;
      out[o + 2] = g;
      out[o + 3] = 255;
    }
  }
  return out;
}

export interface OverlayView {
  widthMm: number;
  heightMm: number;
  pxW: number;
  pxH: number;
}

export interface GuideSpec {
  guide_angle_deg: number;
  guide_offset_mm: number;
}

export interface OverlaySegment {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/**
 * Needle-guide overlay endpoints in frame pixel coordinates.
 *
 * The imaging plane contains the probe axis: in plane coordinates the tip
 * sits at (u=0, v=-height/2) and the guide leaves from `guide_offset_mm`
 * ahead of it, tilted in-plane by the guide angle. Because the plane
 * rotates with the probe, this overlay is independent of the pose.
 */
export function guideOverlay(
  spec: GuideSpec,
  view: OverlayView,
  lengthMm: number,
): OverlaySegment {
  const mmU = view.widthMm / view.pxW;
  const mmV = view.heightMm / view.pxH;
  const g = (spec.guide_angle_deg * Math.PI) / 180;
  const u0 = 0;
  const v0 = -view.heightMm / 2 + spec.guide_offset_mm;
  const u1 = u0 + lengthMm * Math.sin(g);
  const v1 = v0 + lengthMm * Math.cos(g);
  const toPx = (u: number, v: number) => [
    u / mmU + view.pxW / 2 - 0.5,
    v / mmV + view.pxH / 2 - 0.5,
  ];
  const [x0, y0] = toPx(u0, v0);
  const [x1, y1] = toPx(u1, v1);
  return { x0, y0, x1, y1 };
}

export const ZONE_ROWS = ["base", "mid", "apex"] as const;
export const ZONE_SIDES = ["right", "left"] as const;
export const ZONE_COLUMNS = ["medial", "lateral"] as const;

export interface ZoneCell {
  id: number;
  name: string;
  row: number; // 0 base, 1 mid, 2 apex
  col: number; // 0..3 left-lateral, left-medial, right-medial, right-lateral
  hit: boolean;
}

/** Zone id layout: id = row*4 + side*2 + ml (side 0 = right, ml 0 = medial).
 * Columns are arranged anatomically, left zones on the left of the grid. */
export function zoneCells(hitZones: Iterable<number>): ZoneCell[] {
  const hits = new Set(hitZones);
  const cells: ZoneCell[] = [];
  for (let id = 0; id < 12; id++) {
    const row = Math.floor(id / 4);
    const side = Math.floor((id % 4) / 2);
    const ml = id % 2;
    // left side fills columns 0-1 (lateral, medial), right side 2-3
    const col = side === 1 ? (ml === 1 ? 0 : 1) : ml === 0 ? 2 : 3;
    cells.push({
      id,
      name: `${ZONE_ROWS[row]}-${ZONE_SIDES[side]}-${ZONE_COLUMNS[ml]}`,
      row,
      col,
      hit: hits.has(id),
    });
  }
  return cells;
}

export interface ChartModel {
  /** The series exactly as the endpoint returned it. */
  values: [number, number][];
  /** SVG polyline points scaled into the given box. */
  points: string;
}

/** Project a (timestamp, score) series into polyline points for a chart box.
 * The underlying values are kept verbatim so displayed numbers match the
 * service byte for byte. */
export function chartModel(
  series: [number, number][],
  width: number,
  height: number,
  pad = 4,
): ChartModel {
  const values = series.map((p) => [p[0], p[1]] as [number, number]);
  if (values.length === 0) return { values, points: "" };
  const ts = values.map((p) => p[0]);
  const t0 = Math.min(...ts);
  const t1 = Math.max(...ts);
  const span = t1 - t0 || 1;
  const pts = values.map(([t, s]) => {
    const x = pad + ((t - t0) / span) * (width - 2 * pad);
    const y = height - pad - s * (height - 2 * pad); // score axis fixed 0..1
    return `${x},${y}`;
  });
  return { values, points: pts.join(" ") };
}

/** Rolling frames-per-second estimate over a fixed window. */
export class FpsCounter {
  private stamps: number[] = [];

  constructor(private readonly windowMs = 2000) {}

  tick(nowMs: number): void {
    this.stamps.push(nowMs);
    const cutoff = nowMs - this.windowMs;
    while (this.stamps.length > 0 && this.stamps[0] < cutoff) this.stamps.shift();
  }

  fps(nowMs: number): number {
    const cutoff = nowMs - this.windowMs;
    const n = this.stamps.filter((t) => t >= cutoff).length;
    return (n * 1000) / this.windowMs;
  }
}
