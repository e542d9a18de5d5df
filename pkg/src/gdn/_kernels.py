"""Hot inner loops over CSR adjacency.

Each kernel has a numba ``@njit`` body and a numpy/scipy fallback with the
same signature. The numba path is used when numba imports and the
environment variable ``GDN_DISABLE_NUMBA`` is unset or ``0``. Both paths
return float64 arrays; they agree to rounding but are not bitwise equal
(the summation order differs), so a single run always sticks to one path.
"""

from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

_DISABLED = os.environ.get("GDN_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by GDN_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy / scipy fallbacks
# ---------------------------------------------------------------------------


def _mean_matrix(indptr, indices, n_nodes):
    deg = np.diff(indptr)
    inv = np.zeros(n_nodes)
    np.divide(1.0, deg, out=inv, where=deg > 0)
    data = np.repeat(inv, deg)
    return sp.csr_matrix((data, indices, indptr), shape=(n_nodes, n_nodes))


def _np_neighbor_mean(indptr, indices, h):
    return np.asarray(_mean_matrix(indptr, indices, h.shape[0]) @ h)


def _np_neighbor_mean_adjoint(indptr, indices, g):
    # out[i] = sum_{j in N(i)} h[j] / deg(i)  =>  dh[j] = sum_{i: j in N(i)} g[i] / deg(i)
    return np.asarray(_mean_matrix(indptr, indices, g.shape[0]).T @ g)


def _np_same_label_counts(indptr, indices, labels):
    n = indptr.shape[0] - 1
    deg = np.diff(indptr)
    centers = np.repeat(np.arange(n), deg)
    nbr_lab = labels[indices]
    ctr_lab = labels[centers]
    valid = nbr_lab >= 0
    same = valid & (nbr_lab == ctr_lab)
    n_valid = np.bincount(centers[valid], minlength=n)
    n_same = np.bincount(centers[same], minlength=n)
    return n_same.astype(np.int64), n_valid.astype(np.int64)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_neighbor_mean(indptr, indices, h):
        n, c = h.shape
        out = np.zeros((n, c))
        for i in range(n):
            lo = indptr[i]
            hi = indptr[i + 1]
            if hi == lo:
                continue
            inv = 1.0 / (hi - lo)
            for p in range(lo, hi):
                j = indices[p]
                for k in range(c):
                    out[i, k] += h[j, k]
            for k in range(c):
                out[i, k] *= inv
        return out

    @njit(cache=True)
    def _nb_neighbor_mean_adjoint(indptr, indices, g):
        n, c = g.shape
        out = np.zeros((n, c))
        for i in range(n):
            lo = indptr[i]
            hi = indptr[i + 1]
            if hi == lo:
                continue
            inv = 1.0 / (hi - lo)
            for p in range(lo, hi):
                j = indices[p]
                for k in range(c):
                    out[j, k] += g[i, k] * inv
        return out

    @njit(cache=True)
    def _nb_same_label_counts(indptr, indices, labels):
        n = indptr.shape[0] - 1
        n_same = np.zeros(n, dtype=np.int64)
        n_valid = np.zeros(n, dtype=np.int64)
        for i in range(n):
            yi = labels[i]
            for p in range(indptr[i], indptr[i + 1]):
                yj = labels[indices[p]]
                if yj < 0:
                    continue
                n_valid[i] += 1
                if yj == yi:
                    n_same[i] += 1
        return n_same, n_valid


def neighbor_mean(indptr, indices, h, use_numba=None):
    """Row ``i`` of the result is the mean of ``h`` over the neighbors of ``i``.

    Nodes without neighbors get a zero row.
    """
    h = np.ascontiguousarray(h, dtype=np.float64)
    if _pick(use_numba):
        return _nb_neighbor_mean(indptr, indices, h)
    return _np_neighbor_mean(indptr, indices, h)


def neighbor_mean_adjoint(indptr, indices, g, use_numba=None):
    """Vector-Jacobian product of :func:`neighbor_mean` with respect to ``h``."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    if _pick(use_numba):
        return _nb_neighbor_mean_adjoint(indptr, indices, g)
    return _np_neighbor_mean_adjoint(indptr, indices, g)


def same_label_counts(indptr, indices, labels, use_numba=None):
    """Per node: (# labeled neighbors sharing its label, # labeled neighbors)."""
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if _pick(use_numba):
        return _nb_same_label_counts(indptr, indices, labels)
    return _np_same_label_counts(indptr, indices, labels)


def _pick(use_numba):
    if use_numba is None:
        return HAS_NUMBA
    if use_numba and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but unavailable")
    return bool(use_numba)
