"""Compare the compiled and numpy kernel backends on training-shaped inputs.

Run from the repo root:

    python benchmarks/bench_kernels.py

Each case times conv2d forward+backward and maxpool forward+backward over a
few repetitions per backend and reports the per-call time and the speedup of
the compiled kernels over the numpy fallback.
"""

from __future__ import annotations

import time

import numpy as np

from pagefuse.nn import backend

CASES = [
    # (name, batch, channels, filters, kernel, stride, side)
    ("alexnet-b1 side32", 32, 3, 16, 5, 2, 32),
    ("alexnet-b2 side32", 32, 16, 32, 3, 1, 15),
    ("alexnet-b1 side64", 32, 3, 16, 5, 2, 64),
    ("alexnet-b3 side64", 32, 32, 64, 3, 1, 7),
    ("vgg-b1 side32", 32, 8, 8, 3, 1, 32),
    ("vgg-b2 side32", 32, 16, 16, 3, 1, 16),
]

POOL_CASES = [
    ("pool w3s2 side32", 32, 16, 3, 2, 32),
    ("pool w2s2 side64", 32, 16, 2, 2, 64),
]


def time_call(fn, repeats=5):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_conv(impl, batch, channels, filters, kernel, stride, side, rng):
    x = rng.normal(size=(batch, channels, side, side))
    w = rng.normal(size=(filters, channels, kernel, kernel))
    b = rng.normal(size=filters)
    out_side = (side - kernel) // stride + 1
    dy = rng.normal(size=(batch, filters, out_side, out_side))
    forward = time_call(lambda: impl.conv2d_forward(x, w, b, stride))
    backward = time_call(lambda: impl.conv2d_backward(x, w, dy, stride))
    return forward, backward


def bench_pool(impl, batch, channels, window, stride, side, rng):
    x = rng.normal(size=(batch, channels, side, side))
    _, arg = impl.maxpool_forward(x, window, stride)
    out_side = (side - window) // stride + 1
    dy = rng.normal(size=(batch, channels, out_side, out_side))
    forward = time_call(lambda: impl.maxpool_forward(x, window, stride))
    backward = time_call(lambda: impl.maxpool_backward(dy, arg, side, side))
    return forward, backward


def main() -> None:
    names = backend.available_backends()
    print(f"available backends: {', '.join(names)} (active: {backend.active_backend()})")
    rng = np.random.default_rng(0)
    header = f"{'case':<22} {'op':<9}" + "".join(f" {n:>12}" for n in names)
    if len(names) > 1:
        header += f" {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for case in CASES:
        label, *params = case
        rows = {"forward": [], "backward": []}
        for name in names:
            fwd, bwd = bench_conv(backend.get_impl(name), *params, rng)
            rows["forward"].append(fwd)
            rows["backward"].append(bwd)
        for op, times in rows.items():
            line = f"{label:<22} {op:<9}" + "".join(f" {t * 1e3:>10.2f}ms" for t in times)
            if len(times) > 1:
                line += f" {times[0] / times[-1]:>8.2f}x"
            print(line)
    for case in POOL_CASES:
        label, *params = case
        rows = {"forward": [], "backward": []}
        for name in names:
            fwd, bwd = bench_pool(backend.get_impl(name), *params, rng)
            rows["forward"].append(fwd)
            rows["backward"].append(bwd)
        for op, times in rows.items():
            line = f"{label:<22} {op:<9}" + "".join(f" {t * 1e3:>10.2f}ms" for t in times)
            if len(times) > 1:
                line += f" {times[0] / times[-1]:>8.2f}x"
            print(line)


if __name__ == "__main__":
    main()
