"""Timing comparison of the numba kernels against their numpy fallbacks.

Run as ``python benchmarks/bench_kernels.py``. The first numba call per
kernel includes JIT compilation and is excluded by a warmup round. Set
MIXADAPT_NO_NUMBA=1 to confirm the fallback wiring (both columns then run
the numpy path).
"""

import time

import numpy as np

from mixadapt import kernels


def ms(fn, *args, repeats=5):
    fn(*args)  # warmup / JIT
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def main():
    rng = np.random.default_rng(0)
    print(f"numba active: {kernels.NUMBA_ACTIVE}")
    print(f"{'case':38s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max|diff|':>10s}")

    for n, m, d in [(800, 31, 32), (2800, 93, 512), (4000, 128, 128)]:
        a = rng.normal(size=(n, d))
        a /= np.linalg.norm(a, axis=1, keepdims=True)
        b = rng.normal(size=(m, d))
        b /= np.linalg.norm(b, axis=1, keepdims=True)
        t_np = ms(kernels.pairwise_euclidean_numpy, a, b)
        t_nb = ms(kernels.pairwise_euclidean_numba, a, b)
        diff = np.abs(
            kernels.pairwise_euclidean_numpy(a, b) - kernels.pairwise_euclidean_numba(a, b)
        ).max()
        print(
            f"pairwise_euclidean {n}x{m} d={d:4d}     {t_np:10.2f} {t_nb:10.2f} "
            f"{t_np / t_nb:7.1f}x {diff:10.2e}"
        )

    for n, k, d in [(1600, 4, 32), (3000, 31, 512)]:
        x = rng.normal(size=(n, d))
        centers = rng.normal(size=(k, d))
        t_np = ms(kernels.kmeans_assign_numpy, x, centers)
        t_nb = ms(kernels.kmeans_assign_numba, x, centers)
        a_np, s_np, _ = kernels.kmeans_assign_numpy(x, centers)
        a_nb, s_nb, _ = kernels.kmeans_assign_numba(x, centers)
        agree = (a_np == a_nb).mean()
        print(
            f"kmeans_assign {n} pts k={k:3d} d={d:4d}      {t_np:10.2f} {t_nb:10.2f} "
            f"{t_np / t_nb:7.1f}x  agree={agree:.3f}"
        )


if __name__ == "__main__":
    main()
