"""Hot numeric kernels, numba-compiled with a pure-numpy fallback.

The numba path is used whenever numba imports cleanly; set the environment
variable ``MIXADAPT_NO_NUMBA=1`` before import to force the numpy path.
Both paths implement the same arithmetic (the numpy path may differ in the
last few ulps because of vectorized summation order).

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


_DISABLED = os.environ.get("MIXADAPT_NO_NUMBA", "").lower() in ("1", "true", "yes")
NUMBA_ACTIVE = HAVE_NUMBA and not _DISABLED


def pairwise_euclidean_numpy(a, b):
    """Exact pairwise Euclidean distances, chunked to bound the temporary."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = a.shape[0]
    out = np.empty((n, b.shape[0]), dtype=np.float64)
    # keep the (chunk, m, d) difference tensor around ~32 MB
    chunk = max(1, int(4_000_000 // max(1, b.size)))
    for lo in range(0, n, chunk):
        hi = min(n, lo + chunk)
        diff = a[lo:hi, None, :] - b[None, :, :]
        out[lo:hi] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


@njit(cache=True)
def _pairwise_euclidean_nb(a, b):
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(d):
                diff = a[i, t] - b[j, t]
                s += diff * diff
            out[i, j] = np.sqrt(s)
    return out


def pairwise_euclidean_numba(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    return _pairwise_euclidean_nb(a, b)


def kmeans_assign_numpy(x, centers):
    """Nearest-center assignment plus per-center sums and counts."""
    x = np.asarray(x, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    # squared distances via the expansion trick; argmin is robust to the
    # tiny cancellation error because only the ordering matters
    d2 = (
        (x * x).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * x @ centers.T
    )
    assign = np.argmin(d2, axis=1).astype(np.int64)
    k = centers.shape[0]
    counts = np.bincount(assign, minlength=k).astype(np.int64)
    sums = np.zeros_like(centers)
    np.add.at(sums, assign, x)
    return assign, sums, counts


@njit(cache=True)
def _kmeans_assign_nb(x, centers):
    n, d = x.shape
    k = centers.shape[0]
    assign = np.empty(n, dtype=np.int64)
    sums = np.zeros((k, d), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for i in range(n):
        best = 0
        best_d2 = np.inf
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = x[i, t] - centers[j, t]
                s += diff * diff
            if s < best_d2:
                best_d2 = s
                best = j
        assign[i] = best
        counts[best] += 1
        for t in range(d):
            sums[best, t] += x[i, t]
    return assign, sums, counts


def kmeans_assign_numba(x, centers):
    x = np.ascontiguousarray(x, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64)
    return _kmeans_assign_nb(x, centers)


if NUMBA_ACTIVE:
    pairwise_euclidean = pairwise_euclidean_numba
    kmeans_assign = kmeans_assign_numba
else:
    pairwise_euclidean = pairwise_euclidean_numpy
    kmeans_assign = kmeans_assign_numpy
