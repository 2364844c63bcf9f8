#!/usr/bin/env python3
"""Benchmark oblique slice extraction latency on a procedural phantom.

    python3 scripts/bench_slice.py [--dims 256] [--px 512] [--draws 100]
"""

import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from biopsym.volume import PhantomSpec, SlicePlane, extract_slice, generate_phantom


def random_plane(rng, px: int, extent: float, z_hi: float) -> SlicePlane:
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    v = rng.normal(size=3)
    v -= v.dot(u) * u
    v /= np.linalg.norm(v)
    c = rng.uniform((-30.0, -30.0, 20.0), (30.0, 30.0, z_hi))
    return SlicePlane(center=tuple(c), u_axis=tuple(u), v_axis=tuple(v),
                      width_mm=extent, height_mm=extent, px_w=px, px_h=px)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dims", type=int, default=256, help="cubic volume edge, voxels")
    ap.add_argument("--px", type=int, default=512, help="slice edge, pixels")
    ap.add_argument("--draws", type=int, default=100)
    ap.add_argument("--extent", type=float, default=100.0, help="slice edge, mm")
    ap.add_argument("--seed", type=int, default=4242)
    args = ap.parse_args()

    n = args.dims
    half = (n * 0.5) / 2.0
    spec = PhantomSpec(seed=args.seed, dims=(n, n, n),
                       origin=(-(half - 0.25), -(half - 0.25), 0.0))
    t0 = time.perf_counter()
    vol = generate_phantom(spec)
    print(f"phantom {n}^3 generated in {time.perf_counter() - t0:.2f} s")

    rng = np.random.default_rng(args.seed)
    warm = random_plane(rng, args.px, args.extent, z_hi=n * 0.5 - 20.0)
    extract_slice(vol, warm)  # first call JIT-compiles the kernel

    times = []
    for _ in range(args.draws):
        plane = random_plane(rng, args.px, args.extent, z_hi=n * 0.5 - 20.0)
        t0 = time.perf_counter()
        extract_slice(vol, plane)
        times.append((time.perf_counter() - t0) * 1e3)

    times.sort()
    print(f"{args.px}x{args.px} slices from {n}^3, {args.draws} draws:")
    print(f"  min    {times[0]:7.2f} ms")
    print(f"  median {statistics.median(times):7.2f} ms")
    print(f"  p90    {times[int(len(times) * 0.9)]:7.2f} ms")
    print(f"  max    {times[-1]:7.2f} ms")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
