#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times each conv kernel at the channel/spatial sizes the desk model actually
uses, plus one full forward+backward training step per backend.

Usage: python benchmarks/bench_backends.py [--repeats N]
"""

import argparse
import time

import numpy as np

from affseg import desk_preset, SegModel
from affseg import kernels
from affseg.train import compute_loss

# (label, B, H, W, Ci, Co, dilation) at desk-model sizes
CONV_CASES = [
    ("lrd 32x32 c32", 4, 32, 32, 32, 32, 1),
    ("lrd 16x16 c64 d2", 4, 16, 16, 64, 64, 2),
    ("lrd 8x8 c128 d4", 4, 8, 8, 128, 128, 4),
]
DW_CASES = [
    ("effn dw 32x32 c128", 4, 32, 32, 128),
    ("effn dw 8x8 c512", 4, 8, 8, 512),
]


def timeit(fn, repeats):
    fn()  # warm-up / jit compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for label, b, h, w, ci, co, dil in CONV_CASES:
        x = rng.standard_normal((b, h, w, ci))
        wt = rng.standard_normal((3, 3, ci, co))
        gy = rng.standard_normal((b, h, w, co))
        for name, fn in [
            ("fwd", lambda: kernels.conv2d(x, wt, dil)),
            ("dgrad", lambda: kernels.conv2d_input_grad(gy, wt, dil)),
            ("wgrad", lambda: kernels.conv2d_weight_grad(x, gy, 3, dil)),
        ]:
            times = {}
            for backend in ("numba", "numpy"):
                kernels.set_backend(backend)
                times[backend] = timeit(fn, repeats)
            rows.append((f"{label} {name}", times))
    for label, b, h, w, c in DW_CASES:
        x = rng.standard_normal((b, h, w, c))
        wt = rng.standard_normal((3, 3, c))
        gy = rng.standard_normal((b, h, w, c))
        for name, fn in [
            ("fwd", lambda: kernels.dwconv2d(x, wt)),
            ("dgrad", lambda: kernels.dwconv2d_input_grad(gy, wt)),
            ("wgrad", lambda: kernels.dwconv2d_weight_grad(x, gy, 3)),
        ]:
            times = {}
            for backend in ("numba", "numpy"):
                kernels.set_backend(backend)
                times[backend] = timeit(fn, repeats)
            rows.append((f"{label} {name}", times))
    return rows


def bench_train_step(repeats):
    rng = np.random.default_rng(0)
    images = rng.random((4, 1, 64, 64))
    masks = rng.integers(0, 3, (4, 64, 64))
    times = {}
    for backend in ("numba", "numpy"):
        kernels.set_backend(backend)
        model = SegModel(desk_preset(), seed=0)

        def step():
            model.zero_grad()
            compute_loss(model, images, masks).total.backward()

        times[backend] = timeit(step, repeats)
    return times


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()

    initial = kernels.backend()
    print(f"default backend: {initial} (override with AFFSEG_BACKEND=numpy)\n")
    print(f"{'kernel':<28} {'numba ms':>10} {'numpy ms':>10} {'numba/numpy':>12}")
    for label, t in bench_kernels(args.repeats):
        print(f"{label:<28} {t['numba']:>10.3f} {t['numpy']:>10.3f} "
              f"{t['numba'] / t['numpy']:>12.2f}")
    t = bench_train_step(max(2, args.repeats // 3))
    print(f"\n{'full desk fwd+bwd step':<28} {t['numba']:>10.1f} {t['numpy']:>10.1f} "
          f"{t['numba'] / t['numpy']:>12.2f}")
    kernels.set_backend(initial)


if __name__ == "__main__":
    main()
