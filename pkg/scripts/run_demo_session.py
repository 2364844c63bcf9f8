#!/usr/bin/env python3
"""Play a complete scripted 12-core biopsy session against the engine.

Drives the same message pump the WebSocket endpoint uses — pose, fire,
end — with the closed-form aiming script, prints one line per core plus
the final grade, and shows that the persisted record replays identically.

    python3 scripts/run_demo_session.py [--data-dir DIR] [--dump-frames DIR]
"""

import argparse
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from biopsym.probe import pose_to_device
from biopsym.scenario import twelve_core_script
from biopsym.service import build_default_engine, decode_frame


def write_pgm(path: Path, pixels) -> None:
    h, w = pixels.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + pixels.tobytes())


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default=None,
                    help="session store directory (default: a fresh temp dir)")
    ap.add_argument("--scenario", default="phantom-scripted")
    ap.add_argument("--dump-frames", default=None, metavar="DIR",
                    help="write each post-fire ultrasound frame as PGM")
    args = ap.parse_args()

    data_dir = args.data_dir or tempfile.mkdtemp(prefix="biopsym-demo-")
    engine = build_default_engine(data_dir)
    sc = engine.scenario(args.scenario)
    _, prostate = engine.assets(sc.id)

    user = engine.store.create_user("demo")
    sid = engine.create_session(user.user_id, sc.id)
    print(f"session {sid} for scenario {sc.id!r} (store: {data_dir})")

    frames_dir = Path(args.dump_frames) if args.dump_frames else None
    if frames_dir:
        frames_dir.mkdir(parents=True, exist_ok=True)

    script = twelve_core_script(sc, prostate)
    for i, (zone, pose) in enumerate(script):
        dev = pose_to_device(sc.probe, pose)
        replies = engine.handle_message(sid, {
            "type": "pose",
            "position": list(dev.position),
            "orientation": list(dev.orientation),
        })
        frame = next(r for r in replies if isinstance(r, bytes))
        (sample_reply,) = engine.handle_message(sid, {"type": "fire"})
        sample = sample_reply["sample"]
        print(f"  core {i + 1:2d}  aimed {prostate.grid.zone_name(zone):18s}"
              f" hit zones {sorted(sample['zones'])}"
              f"  {sample['inside_mm']:5.1f} mm in gland")
        if frames_dir:
            w, h, _, pixels = decode_frame(frame)
            write_pgm(frames_dir / f"core_{i + 1:02d}.pgm", pixels)

    (result_reply,) = engine.handle_message(sid, {"type": "end"})
    result = result_reply["result"]
    print(f"score {result_reply['score']:.3f}  coverage {result['coverage']:.3f}"
          f"  order {result['order_score']:.3f}"
          f"  out-of-gland {result['out_of_gland_count']}")

    stored = engine.store.replay(sid)
    same = (stored.result is not None
            and stored.score == result_reply["score"]
            and len(stored.samples) == len(script))
    print(f"persisted record replays identically: {same}")
    return 0 if same and result_reply["score"] == 1.0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
