/** Wire protocol shared with the trainer service: JSON message shapes for
 * the WebSocket channel and REST bodies, plus the binary frame codec. */

export interface PoseDict {
  depth: number;
  pitch: number;
  yaw: number;
  roll: number;
}

export interface SampleDict {
  order_index: number;
  fire_pose: PoseDict;
  insertion_mm: number;
  segment: [number[], number[]];
  inside_mm: number;
  zones: number[];
  out_of_gland: boolean;
  timestamp_ms: number;
}

export interface TargetHitDict {
  target_id: string;
  hit: boolean;
  min_distance_mm: number | null;
}

export interface ResultDict {
  samples: SampleDict[];
  coverage: number;
  zone_hit_map: boolean[];
  out_of_gland_count: number;
  order_score: number;
  target_hits: TargetHitDict[];
  total_inside_mm: number;
}

export interface ProbeSpecDict {
  pivot: [number, number, number];
  d_max: number;
  tip_offset_mm: number;
  guide_angle_deg: number;
  guide_offset_mm: number;
  pitch_limit_deg: number;
  yaw_limit_deg: number;
}

export interface ScenarioDict {
  id: string;
  title: string;
  probe: ProbeSpecDict;
  needle: { throw_mm: number; notch_mm: number; notch_offset_mm: number };
  canonical_order: number[];
  targets: { id: string; center: number[]; radius_mm: number }[];
  assistance_views: string[];
  insertion_mm: number;
}

export interface SessionRecordDict {
  session_id: string;
  user_id: string;
  scenario_ref: string;
  started_at_ms: number;
  ended_at_ms: number | null;
  samples: SampleDict[];
  result: ResultDict | null;
  assistance: Record<string, boolean>;
  score: number | null;
}

/** Client -> server control messages. */
export type ClientMsg =
  | { type: "pose"; position: number[]; orientation: number[] }
  | { type: "fire" }
  | { type: "assist"; view: "coronal" | "3d"; on: boolean }
  | { type: "end" };

/** Server -> client JSON events (binary frames arrive separately). */
export type ServerEvent =
  | { type: "sample"; sample: SampleDict }
  | { type: "assist_ok"; view: string; on: boolean }
  | { type: "result"; result: ResultDict; score: number; components: Record<string, number> }
  | { type: "error"; code: string; text: string };

export function isServerEvent(x: unknown): x is ServerEvent {
  if (typeof x !== "object" || x === null) return false;
  const t = (x as { type?: unknown }).type;
  return t === "sample" || t === "assist_ok" || t === "result" || t === "error";
}

export interface Frame {
  width: number;
  height: number;
  mmPerPx: number;
  /** Grayscale intensities, row-major, `height * width` bytes. */
  pixels: Uint8Array;
}

const FRAME_HEADER_BYTES = 12; // u32 width | u32 height | f32 mm/px, little-endian

/** Decode one binary frame from the stream. Throws on a size mismatch. */
export function decodeFrame(buf: ArrayBuffer): Frame {
  if (buf.byteLength < FRAME_HEADER_BYTES) {
    throw new Error(`frame too short: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  const width = view.getUint32(0, true);
  const height = view.getUint32(4, true);
  const mmPerPx = view.getFloat32(8, true);
  const pixels = new Uint8Array(buf, FRAME_HEADER_BYTES);
  if (pixels.length !== width * height) {
    throw new Error(`frame payload ${pixels.length} != ${width}x${height}`);
  }
  return { width, height, mmPerPx, pixels };
}
