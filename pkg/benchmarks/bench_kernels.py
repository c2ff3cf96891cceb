"""Time the numba and numpy paths of the per-pixel kernels and one full blend.

    python3 benchmarks/bench_kernels.py [--size 512] [--repeat 5]

The numba path is warmed up (compiled) before timing. Each row also reports
the largest absolute difference between the two paths.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from srefi import blend, kernels
from srefi._jit import HAS_NUMBA
from srefi.landmarks import mean_shape
from srefi.mesh import build_mesh


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(size: int, rng: np.random.Generator) -> dict:
    image = rng.uniform(0, 255, (size, size, 3))
    half = rng.uniform(0, 255, (size // 2, size // 2, 3))
    mesh = build_mesh(mean_shape(size), size)
    tris = mesh.triangle_coords()
    labels = kernels.rasterize_labels(tris, size, size)
    inv = np.tile(np.array([[1.0, 0.02, 1.5], [-0.01, 0.98, 2.0]]), (len(tris), 1, 1))
    return {
        "rasterize": lambda jit: kernels.rasterize_labels(tris, size, size, jit=jit),
        "warp": lambda jit: kernels.warp_by_labels(image, labels, inv, jit=jit),
        "filter5": lambda jit: kernels.filter5(image, blend.BINOMIAL_5, jit=jit),
        "reduce2": lambda jit: kernels.reduce2(image, blend.BINOMIAL_5, jit=jit),
        "expand2": lambda jit: kernels.expand2(half, blend.EXPAND_TAPS, jit=jit),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba unavailable (or disabled): the 'numba' column runs the kernels as plain Python")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<10} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'max diff':>10}")
    for name, fn in cases(args.size, rng).items():
        fast = fn(True)  # compile
        ref = fn(False)
        diff = float(np.abs(np.asarray(fast, dtype=np.float64) - ref).max())
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        print(f"{name:<10} {1e3 * t_np:>10.2f} {1e3 * t_nb:>10.2f} {t_np / t_nb:>7.1f}x {diff:>10.2e}")


if __name__ == "__main__":
    main()
