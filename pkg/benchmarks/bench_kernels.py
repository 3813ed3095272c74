#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py [--repeats 200]

The same kernels are selected at import time by MIARN_NUMBA; this script
imports both flavors explicitly so the comparison runs in one process.
"""

import argparse
import time

import numpy as np

from miarn.numerics import kernels


def timeit(fn, args, repeats):
    fn(*args)  # warm up (and JIT-compile the numba flavor)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def bench_lstm(repeats, ell=40, n=100, d=100, dtype=np.float32):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(ell, n)).astype(dtype)
    w = (rng.normal(size=(4 * d, n + d)) * 0.1).astype(dtype)
    b = np.zeros(4 * d, dtype=dtype)
    fwd_args = (x, w, b, ell)

    rows = []
    t_np = timeit(kernels.lstm_forward_np, fwd_args, repeats)
    t_nb = timeit(kernels.lstm_forward_nb, fwd_args, repeats) if kernels.NUMBA_AVAILABLE else None
    rows.append((f"lstm_forward  (L={ell}, n={n}, d={d})", t_np, t_nb))

    H, C, TC, I, F, O, G = kernels.lstm_forward_np(*fwd_args)
    d_h = np.zeros((ell, d), dtype=dtype)
    d_h[-1] = rng.normal(size=d).astype(dtype)
    bwd_args = (x, w, H, C, TC, I, F, O, G, d_h, ell)
    t_np = timeit(kernels.lstm_backward_np, bwd_args, repeats)
    t_nb = timeit(kernels.lstm_backward_nb, bwd_args, repeats) if kernels.NUMBA_AVAILABLE else None
    rows.append((f"lstm_backward (L={ell}, n={n}, d={d})", t_np, t_nb))
    return rows


def bench_masked(repeats, ell=80, dtype=np.float32):
    rng = np.random.default_rng(1)
    s = rng.normal(size=(ell, ell)).astype(dtype)
    mask = ~np.eye(ell, dtype=bool)
    rows = []
    t_np = timeit(kernels.row_max_masked_np, (s, mask), repeats)
    t_nb = timeit(kernels.row_max_masked_nb, (s, mask), repeats) if kernels.NUMBA_AVAILABLE else None
    rows.append((f"row_max_masked ({ell}x{ell})", t_np, t_nb))

    v = rng.normal(size=ell).astype(dtype)
    valid = np.ones(ell, dtype=bool)
    valid[ell // 2 :] = False
    t_np = timeit(kernels.softmax_masked_np, (v, valid), repeats)
    t_nb = timeit(kernels.softmax_masked_nb, (v, valid), repeats) if kernels.NUMBA_AVAILABLE else None
    rows.append((f"softmax_masked (len {ell})", t_np, t_nb))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    print(f"numba available: {kernels.NUMBA_AVAILABLE}   active: {kernels.USING_NUMBA}")
    rows = (
        bench_lstm(args.repeats, ell=40, n=100, d=100)
        + bench_lstm(args.repeats, ell=15, n=32, d=32)
        + bench_masked(args.repeats)
    )

    header = f"{'kernel':<38} {'numpy':>12} {'numba':>12} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, t_np, t_nb in rows:
        np_us = t_np * 1e6
        if t_nb is None:
            print(f"{name:<38} {np_us:>10.1f}us {'-':>12} {'-':>9}")
        else:
            nb_us = t_nb * 1e6
            print(f"{name:<38} {np_us:>10.1f}us {nb_us:>10.1f}us {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
