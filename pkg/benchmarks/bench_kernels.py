"""Benchmark the compiled sampling kernels against the numpy fallback.

Run after installing the package:

    python benchmarks/bench_kernels.py [--voxels N] [--channels C] [--repeats R]

Sizes default to one full-resolution frame: a 480x1440 BEV grid with four
vertical bins sampled from a 270x480 feature map, and a 48-bin depth splat
over the same map.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bevtrack._kernels import _backend_pair


def _timeit(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--voxels", type=int, default=480 * 1440 * 4)
    parser.add_argument("--channels", type=int, default=8)
    parser.add_argument("--depth-bins", type=int, default=48)
    parser.add_argument("--feature", type=int, nargs=2, default=(270, 480),
                        metavar=("H", "W"))
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    compiled, fallback = _backend_pair()
    if compiled is None:
        print("compiled kernels unavailable; only timing the numpy fallback")

    rng = np.random.default_rng(0)
    hf, wf = args.feature
    feat = rng.random((args.channels, hf, wf), dtype=np.float32)
    us = rng.uniform(0, wf - 1, args.voxels)
    vs = rng.uniform(0, hf - 1, args.voxels)
    valid = (rng.random(args.voxels) < 0.7).astype(np.uint8)

    prob = rng.random((args.depth_bins, hf, wf), dtype=np.float32)
    prob /= prob.sum(axis=0, keepdims=True)
    n_vox = args.voxels
    vox = rng.integers(-1, n_vox, size=(args.depth_bins, hf, wf), dtype=np.int64)

    rows = []
    for name, backend in [("numpy", fallback)] + ([("compiled", compiled)] if compiled else []):
        t_sample = _timeit(lambda b=backend: b.bilinear_sample(feat, us, vs, valid),
                           args.repeats)
        t_splat = _timeit(lambda b=backend: b.depth_splat(feat, prob, vox, n_vox),
                          args.repeats)
        rows.append((name, t_sample, t_splat))

    print(f"\nbilinear_sample: {args.voxels} taps x {args.channels} channels")
    print(f"depth_splat: {args.depth_bins} bins x {hf}x{wf} pixels x {args.channels} channels")
    print(f"{'backend':<10} {'sample [s]':>12} {'splat [s]':>12}")
    for name, t_sample, t_splat in rows:
        print(f"{name:<10} {t_sample:>12.4f} {t_splat:>12.4f}")
    if compiled and len(rows) == 2:
        print(f"{'speedup':<10} {rows[0][1] / rows[1][1]:>11.2f}x {rows[0][2] / rows[1][2]:>11.2f}x")

    if compiled:
        same_sample = np.array_equal(
            fallback.bilinear_sample(feat, us, vs, valid),
            compiled.bilinear_sample(feat, us, vs, valid),
        )
        same_splat = np.array_equal(
            fallback.depth_splat(feat, prob, vox, n_vox),
            compiled.depth_splat(feat, prob, vox, n_vox),
        )
        print(f"bit-identical: sample={same_sample} splat={same_splat}")


if __name__ == "__main__":
    main()
