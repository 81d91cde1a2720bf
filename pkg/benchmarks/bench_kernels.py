"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--pixels 4000] [--dates 15] [--repeat 3]
"""
import argparse
import time

import numpy as np

from seqlink import _fallback
from seqlink.network import build_nearest3

try:
    from seqlink import _core
except ImportError:  # extension not built
    _core = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(pixels, dates, threads):
    rng = np.random.default_rng(0)
    side = int(np.ceil(np.sqrt(pixels)))
    slc = (rng.normal(size=(dates, side, side)) + 1j * rng.normal(size=(dates, side, side))).astype(np.complex64)
    shp = np.ones((side, side, 11, 15), dtype=bool)
    rows, cols = np.divmod(np.arange(side * side), side)
    coh, _, _ = _fallback.estimate_coherence(slc, shp, rows, cols)
    a = build_nearest3(np.arange(float(dates))).incidence
    chol = np.linalg.cholesky(a.T @ a)
    b = rng.normal(0, 2, (side * side, dates - 1)) @ a.T
    b[::4, 0] += 2 * np.pi
    yield ("coherence 11x15 window", lambda: _fallback.estimate_coherence(slc, shp, rows, cols),
           lambda: _core.estimate_coherence(slc, shp, rows, cols, threads=threads))
    yield ("EMI", lambda: _fallback.emi_batch(coh), lambda: _core.emi_batch(coh, threads=threads))
    yield ("ADMM L1", lambda: _fallback.admm_l1_batch(a, chol, b),
           lambda: _core.admm_l1_batch(a, chol, b, 1.0, 1000, 1e-6, 1e-4, False))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pixels", type=int, default=4000)
    p.add_argument("--dates", type=int, default=15)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    print(f"{args.pixels} pixels, {args.dates} dates, best of {args.repeat}")
    print(f"{'kernel':<24}{'numpy [s]':>12}{'compiled [s]':>14}{'speed-up':>10}")
    for name, slow, fast in cases(args.pixels, args.dates, args.threads):
        t_slow = best_of(slow, args.repeat)
        if _core is None:
            print(f"{name:<24}{t_slow:>12.4f}{'n/a':>14}{'':>10}")
            continue
        t_fast = best_of(fast, args.repeat)
        print(f"{name:<24}{t_slow:>12.4f}{t_fast:>14.4f}{t_slow / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
