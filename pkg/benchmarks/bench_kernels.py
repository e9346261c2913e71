"""Benchmark the compiled kernels against the numpy fallbacks.

Run after an editable install:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mapnav import kernels


def timeit(fn, *args, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_splat():
    rng = np.random.default_rng(0)
    print("splat_accumulate (points -> 21x21 grid, 32 channels)")
    print(f"{'points':>10} {'numpy':>12} {'compiled':>12} {'speedup':>9}")
    for n in (1_000, 10_000, 100_000):
        pos = rng.uniform(-5, 5, size=(n, 3))
        feats = rng.normal(size=(n, 32))
        sems = rng.integers(0, 2 ** 8, size=n).astype(np.uint64)
        args = (pos, feats, sems, 21, 21, 0.5, -0.5, 2.5)
        t_py = timeit(kernels.splat_accumulate_numpy, *args)
        if kernels._compiled is None:
            print(f"{n:>10} {t_py * 1e3:>10.2f}ms {'n/a':>12}")
            continue
        cargs = (np.ascontiguousarray(pos), np.ascontiguousarray(feats),
                 np.ascontiguousarray(sems), *args[3:])
        t_c = timeit(kernels._compiled.splat_accumulate, *cargs)
        print(f"{n:>10} {t_py * 1e3:>10.2f}ms {t_c * 1e3:>10.2f}ms "
              f"{t_py / t_c:>8.1f}x")


def bench_dtw():
    rng = np.random.default_rng(0)
    print("\ndtw_cost (trajectory pairs, 3-d points)")
    print(f"{'length':>10} {'numpy':>12} {'compiled':>12} {'speedup':>9}")
    for n in (10, 50, 200):
        a = rng.normal(size=(n, 3))
        b = rng.normal(size=(n, 3))
        t_py = timeit(kernels.dtw_cost_numpy, a, b)
        if kernels._compiled is None:
            print(f"{n:>10} {t_py * 1e3:>10.2f}ms {'n/a':>12}")
            continue
        t_c = timeit(kernels._compiled.dtw_cost,
                     np.ascontiguousarray(a), np.ascontiguousarray(b))
        print(f"{n:>10} {t_py * 1e3:>10.2f}ms {t_c * 1e3:>10.2f}ms "
              f"{t_py / t_c:>8.1f}x")


if __name__ == "__main__":
    print(f"active backend: {kernels.kernel_backend()}\n")
    bench_splat()
    bench_dtw()
