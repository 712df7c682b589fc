"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run: python benchmarks/bench_kernels.py [--repeats 5]

Covers the three hot paths (batch skeleton features, rule application,
threshold grid search) at a few batch sizes, with a warmup call so JIT
compilation does not pollute the numba timings.
"""

from __future__ import annotations

import argparse
import itertools
import time

import numpy as np

from posepilot import _accel
from posepilot.posebaseline import (
    GRID_SIT_HIP,
    GRID_SIT_KNEE,
    GRID_SPREAD,
    GRID_STAND_KNEE,
    GRID_VERT,
)


def synth_points(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = rng.uniform(0, 640, size=(n, 17, 3))
    pts[:, :, 2] = rng.uniform(0.3, 1.0, size=(n, 17))
    return pts


def full_grid() -> np.ndarray:
    return np.array(
        list(itertools.product(GRID_SIT_KNEE, GRID_SIT_HIP, GRID_STAND_KNEE,
                               GRID_VERT, GRID_SPREAD)),
        dtype=np.float64,
    )


def time_call(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    thresholds = np.array([120.0, 120.0, 160.0, 15.0, 0.35])
    grid = full_grid()
    print(f"grid size: {len(grid)} threshold combinations")
    header = f"{'kernel':<16} {'n':>6} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))

    for n in (100, 285, 1000, 5000):
        pts = synth_points(n)
        feats = _accel.features_batch_numpy(pts, 0.5)
        usable = feats[~np.isnan(feats).any(axis=1)]
        labels = (np.arange(len(usable)) % 3).astype(np.int64)

        cases = [
            ("features_batch", (pts, 0.5)),
            ("rule_apply", (feats, thresholds)),
        ]
        if len(usable) >= 3 and n <= 1000:
            cases.append(("grid_scores", (usable, labels, grid)))

        for name, call_args in cases:
            impls = _accel.IMPLEMENTATIONS[name]
            t_np = time_call(impls["numpy"], *call_args, repeats=args.repeats)
            if impls["numba"] is None:
                print(f"{name:<16} {n:>6} {t_np * 1e3:>12.3f} {'n/a':>12} {'n/a':>9}")
                continue
            impls["numba"](*call_args)  # warmup / JIT
            t_nb = time_call(impls["numba"], *call_args, repeats=args.repeats)
            print(
                f"{name:<16} {n:>6} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} "
                f"{t_np / t_nb:>8.1f}x"
            )

    # agreement spot check on the same inputs
    pts = synth_points(500, seed=1)
    a = _accel.features_batch_numpy(pts, 0.5)
    b = _accel.features_batch_numba(pts, 0.5) if _accel.IMPLEMENTATIONS[
        "features_batch"]["numba"] else a
    agree = np.allclose(a, b, equal_nan=True, atol=1e-12)
    print(f"\npath agreement on shared inputs: {agree}")
    print(f"active path in package: {'numba' if _accel.USE_NUMBA else 'numpy'} "
          f"(POSEPILOT_NUMBA={'unset' if 'POSEPILOT_NUMBA' not in __import__('os').environ else __import__('os').environ['POSEPILOT_NUMBA']})")


if __name__ == "__main__":
    main()
