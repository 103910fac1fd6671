"""Benchmark the numba kernels against their pure-numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py [--points 50000] [--elems 2000000]

The same functions are selected at import time by the MTENSOR_NUMBA
environment flag; this script times both implementations side by side in
one process (first numba calls are compiled and excluded via warmup).
"""
import argparse
import time

import numpy as np

from mtensor import kernels
from mtensor._backend import HAVE_NUMBA


def best_of(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def row(name, t_np, t_nb):
    if t_nb is None:
        print(f"{name:<18} numpy {t_np * 1e3:9.2f} ms   numba       n/a")
    else:
        print(f"{name:<18} numpy {t_np * 1e3:9.2f} ms   numba "
              f"{t_nb * 1e3:9.2f} ms   speedup {t_np / t_nb:6.2f}x")


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--elems", type=int, default=2_000_000,
                        help="elementwise kernel size")
    parser.add_argument("--points", type=int, default=50_000,
                        help="query points for the nearest-neighbor kernel")
    parser.add_argument("--ref-points", type=int, default=1_000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x = rng.standard_normal(args.elems)
    e_prev = rng.standard_normal(args.elems)
    m = rng.standard_normal(args.elems)
    mask = rng.random(args.elems) > 0.5
    p = rng.standard_normal((args.points, 3))
    q = rng.standard_normal((args.ref_points, 3))
    tv = rng.standard_normal((1000, args.elems // 1000))

    print(f"numba available: {HAVE_NUMBA}")
    if HAVE_NUMBA:
        # warm up compilation outside the timed region
        kernels.soft_threshold_nb(x[:8], 0.1)
        kernels.e_step_nb(x[:8], e_prev[:8], m[:8], mask[:8], 0.1, 1.0)
        kernels.min_dists_nb(p[:8], q[:8])
        kernels.tv_axis0_nb(tv[:4, :4], 1e-4)

    row("soft_threshold",
        best_of(kernels.soft_threshold_np, x, 0.3),
        best_of(kernels.soft_threshold_nb, x, 0.3) if HAVE_NUMBA else None)
    row("e_step",
        best_of(kernels.e_step_np, x, e_prev, m, mask, 0.1, 1.0),
        best_of(kernels.e_step_nb, x, e_prev, m, mask, 0.1, 1.0)
        if HAVE_NUMBA else None)
    row("min_dists",
        best_of(kernels.min_dists_np, p, q, 4096),
        best_of(kernels.min_dists_nb, p, q) if HAVE_NUMBA else None)
    row("tv_axis0",
        best_of(kernels.tv_axis0_np, tv, 1e-4),
        best_of(kernels.tv_axis0_nb, tv, 1e-4) if HAVE_NUMBA else None)


if __name__ == "__main__":
    main()
