"""Hot numeric kernels with a compiled fast path and a numpy fallback.

The Cython extension ``mapnav._kernels`` is built on install but is optional
at runtime: a checkout without the extension, or one running with
``MAPNAV_PURE_PY=1``, uses the numpy implementations below.  Both backends
are exercised by the test suite and compared by ``benchmarks/bench_kernels.py``.
"""

import os

import numpy as np

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCE_PURE = bool(os.environ.get("MAPNAV_PURE_PY"))


def kernel_backend() -> str:
    """Name of the backend picked at import time."""
    if _compiled is None or _FORCE_PURE:
        return "pure-python"
    return "compiled"


def splat_accumulate_numpy(positions, features, semantics, n_u, n_v,
                           cell_size, z_min, z_max):
    """Numpy reference for the splat binning kernel.

    Accumulates per-cell feature sums, hit counts, and OR-ed semantic bitsets
    for all points inside the height band and the map extent.
    """
    d = features.shape[1]
    sums = np.zeros((n_u, n_v, d))
    counts = np.zeros((n_u, n_v), dtype=np.int64)
    sem = np.zeros((n_u, n_v), dtype=np.uint64)
    if len(positions) == 0:
        return sums, counts, sem

    z = positions[:, 2]
    keep = (z >= z_min) & (z <= z_max)
    u = np.floor(positions[:, 0] / cell_size + 0.5).astype(np.int64) + n_u // 2
    v = np.floor(positions[:, 1] / cell_size + 0.5).astype(np.int64) + n_v // 2
    keep &= (u >= 0) & (u < n_u) & (v >= 0) & (v < n_v)
    u, v = u[keep], v[keep]

    np.add.at(sums, (u, v), features[keep])
    np.add.at(counts, (u, v), 1)
    np.bitwise_or.at(sem, (u, v), semantics[keep])
    return sums, counts, sem


def dtw_cost_numpy(a, b) -> float:
    """Numpy reference for the DTW cost kernel (Euclidean step cost)."""
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return float("inf")
    dists = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))
    prev = np.full(m + 1, np.inf)
    prev[0] = 0.0
    cur = np.empty(m + 1)
    for i in range(1, n + 1):
        cur[0] = np.inf
        for j in range(1, m + 1):
            cur[j] = dists[i - 1, j - 1] + min(prev[j - 1], prev[j], cur[j - 1])
        prev, cur = cur, prev
    return float(prev[m])


def _as_c(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def splat_accumulate(positions, features, semantics, n_u, n_v,
                     cell_size, z_min, z_max):
    if _compiled is not None and not _FORCE_PURE:
        return _compiled.splat_accumulate(
            _as_c(positions, np.float64), _as_c(features, np.float64),
            _as_c(semantics, np.uint64), n_u, n_v, cell_size, z_min, z_max)
    return splat_accumulate_numpy(positions, features, semantics, n_u, n_v,
                                  cell_size, z_min, z_max)


def dtw_cost(a, b) -> float:
    if _compiled is not None and not _FORCE_PURE:
        return _compiled.dtw_cost(_as_c(a, np.float64), _as_c(b, np.float64))
    return dtw_cost_numpy(a, b)
