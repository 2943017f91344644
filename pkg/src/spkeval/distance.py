"""Angular frame distance and DTW-aligned sequence dissimilarity.

The angle between two frames is computed as ``2 * atan2(|u^ - v^|, |u^ + v^|)``
on unit-normalised vectors. This equals ``arccos(cos_sim(u, v))`` but stays
exact near 0 and pi, where arccos loses half of its significant digits, so
identical directions give exactly 0.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .errors import InputError

_jit = dict(nogil=True, cache=True)


@nb.njit(**_jit)
def _normalize_rows(x):
    n, d = x.shape
    out = np.empty((n, d), dtype=np.float64)
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += x[i, k] * x[i, k]
        norm = math.sqrt(s)
        if norm == 0.0:
            return out, i
        for k in range(d):
            out[i, k] = x[i, k] / norm
    return out, -1


@nb.njit(**_jit)
def _angle_normalized(u, v):
    diff = 0.0
    summ = 0.0
    for k in range(u.shape[0]):
        a = u[k] - v[k]
        b = u[k] + v[k]
        diff += a * a
        summ += b * b
    return 2.0 * math.atan2(math.sqrt(diff), math.sqrt(summ)) / math.pi


@nb.njit(**_jit)
def _angular_cost(xn, yn):
    n, m = xn.shape[0], yn.shape[0]
    cost = np.empty((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            cost[i, j] = _angle_normalized(xn[i], yn[j])
    return cost


@nb.njit(**_jit)
def dtw_mean_cost(cost):
    """Sum-optimal DTW path cost divided by that path's length.

    Steps (1,0), (0,1), (1,1), endpoints pinned. Among paths of equal total
    cost the shorter one wins, which fixes the reported mean.
    """
    n, m = cost.shape
    acc = np.empty((n, m), dtype=np.float64)
    length = np.empty((n, m), dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                acc[0, 0] = cost[0, 0]
                length[0, 0] = 1
                continue
            best = np.inf
            best_len = 0
            # candidate predecessors: diagonal, vertical, horizontal
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
                best_len = length[i - 1, j - 1]
            if i > 0:
                a, l = acc[i - 1, j], length[i - 1, j]
                if a < best or (a == best and l < best_len):
                    best, best_len = a, l
            if j > 0:
                a, l = acc[i, j - 1], length[i, j - 1]
                if a < best or (a == best and l < best_len):
                    best, best_len = a, l
            acc[i, j] = best + cost[i, j]
            length[i, j] = best_len + 1
    return acc[n - 1, m - 1] / length[n - 1, m - 1]


@nb.njit(**_jit)
def _dtw_angular(x, y):
    xn, bad_x = _normalize_rows(x)
    yn, bad_y = _normalize_rows(y)
    if bad_x >= 0 or bad_y >= 0:
        return np.nan, bad_x, bad_y
    return dtw_mean_cost(_angular_cost(xn, yn)), -1, -1


def _as_matrix(x, name):
    a = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise InputError(f"{name}: expected a non-empty frame matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{name}: non-finite values")
    return a


def angular_distance(u, v) -> float:
    """Angle between two frame vectors, scaled to [0, 1]."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise InputError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise InputError("non-finite frame vector")
    un, bad_u = _normalize_rows(u[None, :])
    vn, bad_v = _normalize_rows(v[None, :])
    if bad_u >= 0 or bad_v >= 0:
        raise InputError("angular distance undefined for a zero-norm vector")
    return float(_angle_normalized(un[0], vn[0]))


def angular_distance_matrix(x, y) -> np.ndarray:
    """Pairwise angular distances between the frames of ``x`` and ``y``."""
    x = _as_matrix(x, "x")
    y = _as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise InputError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    xn, bad_x = _normalize_rows(x)
    yn, bad_y = _normalize_rows(y)
    if bad_x >= 0 or bad_y >= 0:
        raise InputError("angular distance undefined for a zero-norm frame")
    return _angular_cost(xn, yn)


def dtw_distance(x, y) -> float:
    """DTW-aligned mean angular distance between two frame sequences.

    Accepts :class:`~spkeval.io.FeatureSequence` objects or 2-D arrays.
    """
    x = _as_matrix(x, "x")
    y = _as_matrix(y, "y")
    if x.shape[1] != y.shape[1]:
        raise InputError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    value, bad_x, bad_y = _dtw_angular(x, y)
    if bad_x >= 0:
        raise InputError(f"zero-norm frame {bad_x} in x")
    if bad_y >= 0:
        raise InputError(f"zero-norm frame {bad_y} in y")
    return float(value)


def dtw_from_cost(cost) -> float:
    """Apply the DTW mean-cost recursion to a precomputed non-negative cost matrix."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise InputError(f"expected a non-empty 2-D cost matrix, got shape {cost.shape}")
    return float(dtw_mean_cost(cost))
