# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: point-cloud splatting and dynamic time warping.

These mirror the numpy fallbacks in ``mapnav.kernels`` exactly, including
accumulation order, so results agree bit-for-bit on identical inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor, sqrt

cnp.import_array()


def splat_accumulate(
    cnp.ndarray[cnp.float64_t, ndim=2] positions,
    cnp.ndarray[cnp.float64_t, ndim=2] features,
    cnp.ndarray[cnp.uint64_t, ndim=1] semantics,
    int n_u,
    int n_v,
    double cell_size,
    double z_min,
    double z_max,
):
    """Bin egocentric points into a (n_u, n_v) grid.

    Returns (feature_sums, counts, semantic_or).  Points outside the height
    band or the map extent are dropped.  Accumulation runs in input order.
    """
    cdef Py_ssize_t n = positions.shape[0]
    cdef Py_ssize_t d = features.shape[1]
    cdef int cu = n_u // 2
    cdef int cv = n_v // 2
    cdef double inv_cs = 1.0 / cell_size

    cdef cnp.ndarray[cnp.float64_t, ndim=3] sums = np.zeros((n_u, n_v, d))
    cdef cnp.ndarray[cnp.int64_t, ndim=2] counts = np.zeros((n_u, n_v), dtype=np.int64)
    cdef cnp.ndarray[cnp.uint64_t, ndim=2] sem = np.zeros((n_u, n_v), dtype=np.uint64)

    cdef Py_ssize_t i, k
    cdef double x, y, z
    cdef long u, v
    for i in range(n):
        z = positions[i, 2]
        if z < z_min or z > z_max:
            continue
        x = positions[i, 0]
        y = positions[i, 1]
        u = <long>floor(x * inv_cs + 0.5) + cu
        v = <long>floor(y * inv_cs + 0.5) + cv
        if u < 0 or u >= n_u or v < 0 or v >= n_v:
            continue
        for k in range(d):
            sums[u, v, k] += features[i, k]
        counts[u, v] += 1
        sem[u, v] |= semantics[i]
    return sums, counts, sem


def dtw_cost(
    cnp.ndarray[cnp.float64_t, ndim=2] a,
    cnp.ndarray[cnp.float64_t, ndim=2] b,
):
    """Unnormalized DTW cost between two point sequences (Euclidean step cost)."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    if n == 0 or m == 0:
        return float("inf")

    cdef cnp.ndarray[cnp.float64_t, ndim=1] prev = np.full(m + 1, np.inf)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cur = np.empty(m + 1)
    prev[0] = 0.0

    cdef Py_ssize_t i, j, c
    cdef double dist, acc, best
    for i in range(1, n + 1):
        cur[0] = np.inf
        for j in range(1, m + 1):
            acc = 0.0
            for c in range(k):
                dist = a[i - 1, c] - b[j - 1, c]
                acc += dist * dist
            dist = sqrt(acc)
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = dist + best
        prev, cur = cur, prev
    return float(prev[m])
