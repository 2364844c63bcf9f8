import { describe, expect, it } from "vitest";

import {
  DEFAULT_TUNING,
  PoseControl,
  poseQuaternion,
  poseToDeviceMsg,
  probeAxis,
} from "../src/input.js";
import type { PoseDict, ProbeSpecDict } from "../src/protocol.js";
import { fixtureJson } from "./helpers.js";

interface PoseCase {
  spec: ProbeSpecDict;
  pose: PoseDict;
  device: { position: number[]; orientation: number[] };
}

const cases = fixtureJson<PoseCase[]>("poses.json");

const SPEC: ProbeSpecDict = {
  pivot: [0, 0, 0],
  d_max: 60,
  tip_offset_mm: 0,
  guide_angle_deg: 5,
  guide_offset_mm: 0,
  pitch_limit_deg: 30,
  yaw_limit_deg: 30,
};

describe("device pose encoding matches the service's own round trip", () => {
  it("reproduces every captured (spec, pose) -> device case", () => {
    expect(cases.length).toBeGreaterThanOrEqual(27);
    for (const c of cases) {
      const got = poseToDeviceMsg(c.spec, c.pose);
      for (let i = 0; i < 3; i++) {
        expect(Math.abs(got.position[i] - c.device.position[i])).toBeLessThan(1e-9);
      }
      // quaternions are a double cover: q and -q encode the same rotation
      const q = got.orientation;
      const want = c.device.orientation;
      const direct = Math.max(...q.map((v, i) => Math.abs(v - want[i])));
      const flipped = Math.max(...q.map((v, i) => Math.abs(v + want[i])));
      expect(Math.min(direct, flipped)).toBeLessThan(1e-9);
    }
  });

  it("unit quaternion and on-axis position for arbitrary poses", () => {
    const pose: PoseDict = { depth: 33, pitch: 0.3, yaw: -0.2, roll: 1.1 };
    const q = poseQuaternion(pose);
    expect(Math.hypot(...q)).toBeCloseTo(1, 12);
    const axis = probeAxis(pose);
    const msg = poseToDeviceMsg(SPEC, pose);
    for (let i = 0; i < 3; i++) {
      expect(msg.position[i]).toBeCloseTo(33 * axis[i], 12);
    }
  });
});

describe("gesture mapping", () => {
  it("drag steers yaw horizontally and pitch vertically", () => {
    const c = new PoseControl(SPEC);
    const pose = c.drag(100, -50);
    expect(pose.yaw).toBeCloseTo(100 * DEFAULT_TUNING.radPerPx, 12);
    expect(pose.pitch).toBeCloseTo(-50 * DEFAULT_TUNING.radPerPx, 12);
    expect(pose.depth).toBe(0);
    expect(pose.roll).toBe(0);
  });

  it("drag clamps to the probe's angular limits and stays there", () => {
    const c = new PoseControl(SPEC);
    const lim = (30 * Math.PI) / 180;
    const pose = c.drag(100000, -100000);
    expect(pose.yaw).toBeCloseTo(lim, 12);
    expect(pose.pitch).toBeCloseTo(-lim, 12);
    const again = c.drag(1, 1);
    expect(again.yaw).toBeCloseTo(lim, 9);
    expect(again.pitch).toBeLessThanOrEqual(-lim + 2 * DEFAULT_TUNING.radPerPx);
  });

  it("wheel inserts and withdraws within [0, d_max]", () => {
    const c = new PoseControl(SPEC);
    expect(c.wheel(-100).depth).toBeCloseTo(DEFAULT_TUNING.mmPerWheelStep, 12);
    expect(c.wheel(-100000).depth).toBe(60);
    expect(c.wheel(100000).depth).toBe(0);
  });

  it("modifier-drag rolls and wraps to (-pi, pi]", () => {
    const c = new PoseControl(SPEC);
    const quarterTurnPx = (Math.PI / 2) / DEFAULT_TUNING.rollRadPerPx;
    expect(c.rollDrag(quarterTurnPx).roll).toBeCloseTo(Math.PI / 2, 9);
    const wrapped = c.rollDrag(3 * quarterTurnPx).roll; // total 2pi -> wraps to 0
    expect(Math.abs(wrapped)).toBeLessThan(1e-9);
  });

  it("deviceMsg reflects the accumulated gesture state", () => {
    const c = new PoseControl(SPEC);
    c.wheel(-500); // +10 mm
    c.drag(50, 0);
    const msg = c.deviceMsg();
    const axis = probeAxis(c.pose);
    expect(msg.position[2]).toBeCloseTo(10 * axis[2], 12);
    expect(Math.hypot(...msg.orientation)).toBeCloseTo(1, 12);
  });
});
