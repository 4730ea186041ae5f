#!/usr/bin/env python3
"""Compare the numba-compiled kernels against their pure-numpy fallbacks.

Usage:
    python benchmarks/benchmark_kernels.py [--size 200000] [--iterations 50]

The same functions power training and aggregation; which twin the package
uses at runtime is controlled by the ASYNCFED_KERNELS environment variable.
"""

import argparse
import time

import numpy as np

from asyncfed.kernels import IMPLEMENTATIONS


def bench(fn, args, iterations, warmup=3):
    for _ in range(warmup):
        fn(*args)
    times = []
    for _ in range(iterations):
        start = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=200_000,
                        help="parameter vector length for the merge/combine kernels")
    parser.add_argument("--batch", type=int, default=512,
                        help="batch size for the softmax gradient kernel")
    parser.add_argument("--dims", type=int, default=64)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--iterations", type=int, default=50)
    args = parser.parse_args()

    if "numba" not in IMPLEMENTATIONS:
        raise SystemExit("numba backend unavailable; nothing to compare")

    rng = np.random.default_rng(0)
    n = args.size
    vec_args = {
        "merge_directional": (rng.standard_normal(n), rng.standard_normal(n),
                              rng.standard_normal(n), 0.3),
        "weighted_combine": (rng.standard_normal((8, n)), rng.dirichlet(np.ones(8))),
        "softmax_xent": (
            rng.standard_normal((args.batch, args.dims)),
            rng.integers(0, args.classes, args.batch).astype(np.int64),
            rng.standard_normal((args.dims, args.classes)),
            rng.standard_normal(args.classes),
        ),
        "momentum_step": (rng.standard_normal(n), rng.standard_normal(n),
                          rng.standard_normal(n), 0.01, 0.9),
    }

    print(f"large shapes (n={n}, batch {args.batch}x{args.dims}x{args.classes})")
    print(f"{'kernel':<20} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    print("-" * 57)
    for name, call_args in vec_args.items():
        t_np = bench(IMPLEMENTATIONS["numpy"][name], call_args, args.iterations)
        t_nb = bench(IMPLEMENTATIONS["numba"][name], call_args, args.iterations)
        print(f"{name:<20} {t_np * 1e3:>10.3f}ms {t_nb * 1e3:>10.3f}ms "
              f"{t_np / t_nb:>8.2f}x")

    # simulation-scale shapes: toy models, small batches, many invocations
    small = {
        "merge_directional": (rng.standard_normal(64), rng.standard_normal(64),
                              rng.standard_normal(64), 0.3),
        "weighted_combine": (rng.standard_normal((3, 64)), rng.dirichlet(np.ones(3))),
        "softmax_xent": (
            rng.standard_normal((32, 2)),
            rng.integers(0, 2, 32).astype(np.int64),
            rng.standard_normal((2, 2)),
            rng.standard_normal(2),
        ),
        "momentum_step": (rng.standard_normal(64), rng.standard_normal(64),
                          rng.standard_normal(64), 0.01, 0.9),
    }
    print()
    print("simulation-scale shapes (n=64, batch 32x2x2)")
    print(f"{'kernel':<20} {'numpy':>12} {'numba':>12} {'speedup':>9}")
    print("-" * 57)
    for name, call_args in small.items():
        t_np = bench(IMPLEMENTATIONS["numpy"][name], call_args, args.iterations * 20)
        t_nb = bench(IMPLEMENTATIONS["numba"][name], call_args, args.iterations * 20)
        print(f"{name:<20} {t_np * 1e6:>10.2f}us {t_nb * 1e6:>10.2f}us "
              f"{t_np / t_nb:>8.2f}x")


if __name__ == "__main__":
    main()
