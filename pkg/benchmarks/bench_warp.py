"""Compare the compiled and pure-numpy affine warp kernels.

Run as: python3 benchmarks/bench_warp.py [--size 256] [--repeats 30]

Both backends must produce bit-identical output; the benchmark verifies
that before timing.
"""

import argparse
import math
import time

import numpy as np

from lcaug.kernels import BACKEND, affine_warp
from lcaug.kernels._warp_py import affine_warp as affine_warp_numpy


def rotation_coeffs(size: float, degrees: float):
    cx = cy = (size - 1) / 2.0
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    return (c, s, cx - c * cx - s * cy, -s, c, cy + s * cx - c * cy)


def bench(fn, pixels, coeffs, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(pixels, coeffs, (128, 128, 128))
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, (args.size, args.size, 3), dtype=np.uint8)
    coeffs = rotation_coeffs(args.size, 17.0)

    a = affine_warp(pixels, coeffs, (128, 128, 128))
    b = affine_warp_numpy(pixels, coeffs, (128, 128, 128))
    assert np.array_equal(a, b), "backends disagree"

    t_active = bench(affine_warp, pixels, coeffs, args.repeats)
    t_numpy = bench(affine_warp_numpy, pixels, coeffs, args.repeats)

    print(f"image {args.size}x{args.size}, best of {args.repeats} runs")
    print(f"active backend ({BACKEND}): {t_active * 1e3:8.3f} ms")
    print(f"numpy fallback:             {t_numpy * 1e3:8.3f} ms")
    if BACKEND != "numpy":
        print(f"speedup: {t_numpy / t_active:.2f}x")


if __name__ == "__main__":
    main()
