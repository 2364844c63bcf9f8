#!/usr/bin/env python3
"""Capture wire-format golden fixtures for the browser client's tests.

Everything written here is an artifact of the public interfaces — binary
WebSocket frames, REST JSON bodies, session replay records — so the client
tests pin against exactly what the service emits, not against any Python
internals.

    python3 scripts/make_ui_fixtures.py [--out frontend/tests/fixtures]
"""

import argparse
import hashlib
import json
import math
import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from biopsym.probe import ProbePose, ProbeSpec, pose_to_device
from biopsym.scenario import default_scenarios, twelve_core_script
from biopsym.service import build_default_engine
from biopsym.volume import SlicePlane
from biopsym.probe import image_plane_of, guide_line_of


def sha256(buf: bytes) -> str:
    return hashlib.sha256(buf).hexdigest()


def pose_msg(spec: ProbeSpec, pose: ProbePose) -> dict:
    dev = pose_to_device(spec, pose)
    return {"type": "pose", "position": list(dev.position),
            "orientation": list(dev.orientation)}


def capture_session(out: Path) -> None:
    """Scripted 12-core run through the engine message pump; store every
    frame hash, the first frames raw, all events, and the replay record."""
    engine = build_default_engine(tempfile.mkdtemp(prefix="biopsym-fixtures-"))
    sc = engine.scenario("phantom-scripted")
    _, prostate = engine.assets(sc.id)
    user = engine.store.create_user("fixture-user")
    sid = engine.create_session(user.user_id, sc.id)

    # keep the coronal assist on from the start so pose replies pair frames
    (ack,) = engine.handle_message(sid, {"type": "assist", "view": "coronal",
                                         "on": True})
    assert ack["type"] == "assist_ok", ack

    fires = []
    frame_hashes = []
    raw_dir = out / "frames"
    raw_dir.mkdir(parents=True, exist_ok=True)
    for i, (zone, pose) in enumerate(twelve_core_script(sc, prostate)):
        replies = engine.handle_message(sid, pose_msg(sc.probe, pose))
        frames = [r for r in replies if isinstance(r, bytes)]
        assert len(frames) == 2, "pose with coronal assist pairs main+coronal"
        if i < 3:
            (raw_dir / f"pose_{i:02d}_main.bin").write_bytes(frames[0])
            (raw_dir / f"pose_{i:02d}_coronal.bin").write_bytes(frames[1])
        frame_hashes.append({"main": sha256(frames[0]),
                             "coronal": sha256(frames[1])})
        (sample_reply,) = engine.handle_message(sid, {"type": "fire"})
        fires.append(sample_reply)

    (result_reply,) = engine.handle_message(sid, {"type": "end"})

    from fastapi.testclient import TestClient
    from biopsym.service import create_app
    client = TestClient(create_app(engine))
    replay = client.get(f"/sessions/{sid}/replay")
    series = client.get(f"/users/{user.user_id}/series",
                        params={"kind": "simulation"})
    timeline = client.get(f"/users/{user.user_id}/timeline")

    (out / "session.json").write_text(json.dumps({
        "scenario_id": sc.id,
        "session_id": sid,
        "frame_hashes": frame_hashes,
        "fires": fires,
        "result": result_reply,
    }, indent=1))
    (out / "replay.json").write_bytes(replay.content)
    (out / "series.json").write_bytes(series.content)
    (out / "timeline.json").write_bytes(timeline.content)


def capture_poses(out: Path) -> None:
    """Probe poses and the device poses that reproduce them, for the input
    mapping tests (several specs, deterministic grid of angles)."""
    specs = [
        ProbeSpec(),
        ProbeSpec(guide_angle_deg=0.0),
        ProbeSpec(pivot=(3.0, -2.0, 1.0), tip_offset_mm=2.0,
                  guide_angle_deg=10.0, guide_offset_mm=1.0),
    ]
    cases = []
    for si, spec in enumerate(specs):
        for depth in (0.0, 12.5, 40.0):
            for deg in (-20.0, 0.0, 15.0):
                pose = ProbePose(depth=depth, pitch=math.radians(deg),
                                 yaw=math.radians(-deg / 2), roll=math.radians(deg / 3))
                dev = pose_to_device(spec, pose)
                cases.append({
                    "spec": {"pivot": list(spec.pivot), "d_max": spec.d_max,
                             "tip_offset_mm": spec.tip_offset_mm,
                             "guide_angle_deg": spec.guide_angle_deg,
                             "guide_offset_mm": spec.guide_offset_mm,
                             "pitch_limit_deg": spec.pitch_limit_deg,
                             "yaw_limit_deg": spec.yaw_limit_deg},
                    "pose": {"depth": pose.depth, "pitch": pose.pitch,
                             "yaw": pose.yaw, "roll": pose.roll},
                    "device": {"position": list(dev.position),
                               "orientation": list(dev.orientation)},
                })
    (out / "poses.json").write_text(json.dumps(cases, indent=1))


def capture_guide_overlays(out: Path) -> None:
    """Expected pixel endpoints of the needle-guide overlay, computed by
    projecting the world-space guide line into the image plane."""
    entries = []
    for spec in (ProbeSpec(), ProbeSpec(guide_angle_deg=0.0),
                 ProbeSpec(guide_angle_deg=10.0, guide_offset_mm=1.0)):
        for pose in (ProbePose(0.0, 0.0, 0.0, 0.0),
                     ProbePose(25.0, math.radians(10), math.radians(-8),
                               math.radians(30))):
            extent, res, length = (60.0, 60.0), (256, 256), 40.0
            plane = image_plane_of(spec, pose, extent=extent, resolution=res)
            guide = guide_line_of(spec, pose)
            c = np.array(plane.center)
            u = np.array(plane.u_axis)
            v = np.array(plane.v_axis)
            pts = []
            for w in (np.array(guide.origin),
                      np.array(guide.origin) + length * np.array(guide.direction)):
                rel = w - c
                pts.append([
                    float(rel.dot(u) / plane.mm_per_px_u + res[0] / 2 - 0.5),
                    float(rel.dot(v) / plane.mm_per_px_v + res[1] / 2 - 0.5),
                ])
            entries.append({
                "guide_angle_deg": spec.guide_angle_deg,
                "guide_offset_mm": spec.guide_offset_mm,
                "extent_mm": list(extent),
                "resolution_px": list(res),
                "length_mm": length,
                "pose": {"depth": pose.depth, "pitch": pose.pitch,
                         "yaw": pose.yaw, "roll": pose.roll},
                "p0": pts[0],
                "p1": pts[1],
            })
    (out / "guide_overlays.json").write_text(json.dumps(entries, indent=1))


def capture_scenarios(out: Path) -> None:
    from fastapi.testclient import TestClient
    from biopsym.service import create_app
    engine = build_default_engine(tempfile.mkdtemp(prefix="biopsym-fixtures-"))
    client = TestClient(create_app(engine))
    (out / "scenarios.json").write_bytes(client.get("/scenarios").content)
    (out / "exercises.json").write_bytes(client.get("/exercises").content)
    mesh = client.get("/scenarios/phantom-scripted/mesh")
    (out / "gland.obj").write_bytes(mesh.content)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    default_out = Path(__file__).resolve().parent.parent / "frontend" / "tests" / "fixtures"
    ap.add_argument("--out", default=str(default_out))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    capture_session(out)
    capture_poses(out)
    capture_guide_overlays(out)
    capture_scenarios(out)
    names = sorted(p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file())
    print(f"wrote {len(names)} fixture files to {out}:")
    for n in names:
        print(f"  {n}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
