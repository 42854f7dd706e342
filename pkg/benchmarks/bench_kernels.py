#!/usr/bin/env python3
"""Time the compiled local-SGD kernels against the pure-Python fallback.

Runs each kernel on a representative workload for both backends, checks the
outputs agree bit for bit (they share the exact operation order), and prints
per-kernel timings with the speedup factor.

Usage: python3 benchmarks/bench_kernels.py [--steps N] [--repeats R]
"""

import argparse
import sys
import time

import numpy as np

from fedsim.kernels import compiled, pure


def make_workloads(steps):
    gen = np.random.default_rng(0)
    batch = 32
    n, dim = 5000, 20
    x = gen.normal(size=(n, dim))
    y_ls = gen.normal(size=n)
    y_lg = np.where(gen.uniform(size=n) < 0.5, -1.0, 1.0)
    idx = gen.integers(0, n, size=(steps, batch), dtype=np.int64).ravel()
    w = gen.normal(size=dim) * 0.1
    diag = gen.uniform(0.5, 2.0, size=dim)
    b_mat = gen.normal(size=(dim, dim))
    dense = b_mat.T @ b_mat / dim + 0.5 * np.eye(dim)
    offset = gen.normal(size=dim)

    n_in, n_hidden = 10, 16
    x_small = gen.normal(size=(n, n_in))
    w_mlp = gen.normal(size=n_hidden * (n_in + 2) + 1) * 0.1
    mlp_steps = max(1, steps // 4)
    idx_mlp = gen.integers(0, n, size=(mlp_steps, batch), dtype=np.int64).ravel()

    return [
        ("quadratic_diag", "sgd_quadratic_diag",
         (w, diag, offset, 1e-3, steps)),
        ("quadratic_dense", "sgd_quadratic_dense",
         (w, dense, offset, 1e-3, steps)),
        ("least_squares", "sgd_least_squares",
         (w, x, y_ls, idx, 1e-3, steps, batch)),
        ("logistic", "sgd_logistic",
         (w, x, y_lg, idx, 1e-3, steps, batch)),
        ("mlp1", "sgd_mlp1",
         (w_mlp, x_small, y_ls, idx_mlp, 1e-3, mlp_steps, batch,
          n_in, n_hidden)),
    ]


def best_of(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - start)
    return best, out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=2000,
                        help="local steps per kernel call (default 2000)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="take the best of this many calls (default 5)")
    args = parser.parse_args(argv)

    if compiled is None:
        print("compiled kernels are not available in this install; "
              "timing the pure backend only", file=sys.stderr)

    header = f"{'kernel':<16} {'pure':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, entry, call_args in make_workloads(args.steps):
        t_pure, out_pure = best_of(getattr(pure, entry), call_args, args.repeats)
        if compiled is None:
            print(f"{name:<16} {t_pure * 1e3:>8.2f}ms {'-':>10} {'-':>8}")
            continue
        t_fast, out_fast = best_of(getattr(compiled, entry), call_args,
                                   args.repeats)
        w_pure, bad_pure = out_pure
        w_fast, bad_fast = out_fast
        agree = (np.asarray(w_pure).tobytes() == np.asarray(w_fast).tobytes()
                 and bad_pure == bad_fast)
        flag = "" if agree else "  MISMATCH"
        print(f"{name:<16} {t_pure * 1e3:>8.2f}ms {t_fast * 1e3:>8.2f}ms "
              f"{t_pure / t_fast:>7.1f}x{flag}")
        if not agree:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
