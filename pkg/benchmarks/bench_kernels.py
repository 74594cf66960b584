#!/usr/bin/env python3
"""Time the numba and pure-numpy kernel paths on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 20]

The first numba call (JIT compilation) is excluded from the timings.
"""
import argparse
import statistics
import time

import numpy as np

from domassim import kernels
from domassim._accel import HAVE_NUMBA


def _cases(rng):
    lv = rng.integers(0, 16, (64, 32, 32))
    offs = np.array([[3, 0], [3, 3], [0, 3], [-3, 3], [-3, 0], [-3, -3], [0, -3], [3, -3]])
    xpad = rng.standard_normal((32, 16, 34, 34)).astype(np.float32)
    cols = kernels.get_impl("im2col", "numpy")(xpad, 3, 3, 1)
    x = rng.standard_normal((32, 16, 32, 32)).astype(np.float32)
    out, arg = kernels.get_impl("maxpool_forward", "numpy")(x, 2, 2)
    g = rng.standard_normal(out.shape).astype(np.float32)
    return [
        ("glcm_counts 64x32x32 G16 8 offsets", "glcm_counts", (lv, offs, 16)),
        ("im2col 32x16x34x34 k3", "im2col", (xpad, 3, 3, 1)),
        ("col2im 32x16x34x34 k3", "col2im", (cols, 34, 34, 1)),
        ("maxpool_forward 32x16x32x32 w2", "maxpool_forward", (x, 2, 2)),
        ("maxpool_backward 32x16x32x32 w2", "maxpool_backward", (g, arg, 32, 32)),
    ]


def _time(fn, args, repeat):
    fn(*args)  # warm-up / compile
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    if not HAVE_NUMBA:
        print("numba not installed; timing the numpy path only")
    print(f"{'kernel':36s}" + "".join(f"{b + ' ms':>12s}" for b in backends) + ("     speedup" if HAVE_NUMBA else ""))
    for label, name, kargs in _cases(np.random.default_rng(args.seed)):
        ms = [1e3 * _time(kernels.get_impl(name, b), kargs, args.repeat) for b in backends]
        line = f"{label:36s}" + "".join(f"{t:12.3f}" for t in ms)
        if HAVE_NUMBA:
            line += f"{ms[0] / ms[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
