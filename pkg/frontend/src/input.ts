/** Pointer/wheel state machine that turns mouse gestures into probe poses,
 * and re-encodes a pose as the 6-DOF device message the service expects.
 *
 * Conventions match the service: rotation Ry(yaw)·Rx(pitch)·Rz(roll), probe
 * axis (sin yaw·cos pitch, −sin pitch, cos yaw·cos pitch), angles radians.
 */

import type { PoseDict, ProbeSpecDict } from "./protocol.js";

export interface DeviceMsgBody {
  position: [number, number, number];
  orientation: [number, number, number, number]; // quaternion (w, x, y, z)
}

const DEG = Math.PI / 180;

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

export function probeAxis(pose: PoseDict): [number, number, number] {
  return [
    Math.sin(pose.yaw) * Math.cos(pose.pitch),
    -Math.sin(pose.pitch),
    Math.cos(pose.yaw) * Math.cos(pose.pitch),
  ];
}

/** Hamilton product of (w,x,y,z) quaternions. */
function qmul(a: number[], b: number[]): [number, number, number, number] {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

/** Quaternion of Ry(yaw)·Rx(pitch)·Rz(roll), normalized, w >= 0. */
export function poseQuaternion(pose: PoseDict): [number, number, number, number] {
  const qy = [Math.cos(pose.yaw / 2), 0, Math.sin(pose.yaw / 2), 0];
  const qx = [Math.cos(pose.pitch / 2), Math.sin(pose.pitch / 2), 0, 0];
  const qz = [Math.cos(pose.roll / 2), 0, 0, Math.sin(pose.roll / 2)];
  let q = qmul(qmul(qy, qx), qz);
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  q = q.map((c) => c / n) as [number, number, number, number];
  return q[0] < 0 ? (q.map((c) => -c) as [number, number, number, number]) : q;
}

/** The device pose that reproduces `pose` under the service's projection:
 * position on the probe axis at the insertion depth, orientation the full
 * pose rotation. */
export function poseToDeviceMsg(spec: ProbeSpecDict, pose: PoseDict): DeviceMsgBody {
  const axis = probeAxis(pose);
  return {
    position: [
      spec.pivot[0] + pose.depth * axis[0],
      spec.pivot[1] + pose.depth * axis[1],
      spec.pivot[2] + pose.depth * axis[2],
    ],
    orientation: poseQuaternion(pose),
  };
}

export interface GestureTuning {
  /** Radians of pitch/yaw per pixel of drag. */
  radPerPx: number;
  /** mm of depth per wheel step (one notch ~ 100 deltaY units). */
  mmPerWheelStep: number;
  /** Radians of roll per pixel of modifier-drag. */
  rollRadPerPx: number;
}

export const DEFAULT_TUNING: GestureTuning = {
  radPerPx: 0.2 * DEG,
  mmPerWheelStep: 2.0,
  rollRadPerPx: 0.4 * DEG,
};

/** Live pose state driven by pointer gestures, clamped to the probe limits
 * exactly like the service clamps them (so the echo matches what we show). */
export class PoseControl {
  pose: PoseDict = { depth: 0, pitch: 0, yaw: 0, roll: 0 };

  constructor(
    private readonly spec: ProbeSpecDict,
    private readonly tuning: GestureTuning = DEFAULT_TUNING,
  ) {}

  /** Plain drag: horizontal steers yaw, vertical steers pitch (pulling the
   * handle down pitches the tip up, hence the sign). */
  drag(dxPx: number, dyPx: number): PoseDict {
    const yawLim = this.spec.yaw_limit_deg * DEG;
    const pitchLim = this.spec.pitch_limit_deg * DEG;
    this.pose.yaw = clamp(this.pose.yaw + dxPx * this.tuning.radPerPx, -yawLim, yawLim);
    this.pose.pitch = clamp(this.pose.pitch + dyPx * this.tuning.radPerPx, -pitchLim, pitchLim);
    return { ...this.pose };
  }

  /** Modifier-drag: horizontal motion rolls the probe about its axis. */
  rollDrag(dxPx: number): PoseDict {
    let r = this.pose.roll + dxPx * this.tuning.rollRadPerPx;
    // keep roll wrapped to (-pi, pi] like the service reports it back
    r = Math.atan2(Math.sin(r), Math.cos(r));
    this.pose.roll = r;
    return { ...this.pose };
  }

  /** Wheel: scroll up inserts, scroll down withdraws, clamped to travel. */
  wheel(deltaY: number): PoseDict {
    const step = (-deltaY / 100) * this.tuning.mmPerWheelStep;
    this.pose.depth = clamp(this.pose.depth + step, 0, this.spec.d_max);
    return { ...this.pose };
  }

  deviceMsg(): DeviceMsgBody {
    return poseToDeviceMsg(this.spec, this.pose);
  }
}
