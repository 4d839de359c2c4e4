"""Numeric inner loops, compiled with numba when available.

Every kernel has two implementations: a numba ``@njit`` version and a pure
numpy version. The numpy path is selected when the ``MEPA_NO_NUMBA``
environment variable is truthy or when numba cannot be imported; otherwise
the jitted path is used. ``benchmarks/bench_kernels.py`` times both.

All kernels take float64 C-contiguous arrays. fastmath stays off so that
summation order, and therefore ranking ties, are reproducible.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("MEPA_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in {"1", "true", "yes", "on"}


# -- numpy implementations ----------------------------------------------------

def np_hybrid_scores(q, img, meta, alpha):
    # einsum, not @: BLAS matvec results can vary with row position, and
    # duplicate rows must score bit-identically for id tie-breaks to hold
    return alpha * np.einsum("ij,j->i", img, q) + (1.0 - alpha) * np.einsum(
        "ij,j->i", meta, q
    )


def np_matvec(m, v):
    return np.einsum("ij,j->i", m, v)


def np_row_dots(a, b):
    return np.einsum("ij,ij->i", a, b)


def np_argmax_at(values, indices):
    if indices.shape[0] == 0:
        return -1
    # np.argmax returns the first maximum, i.e. the lowest index wins ties
    return int(indices[int(np.argmax(values[indices]))])


def np_scalarized_scores(rel, coh, lam):
    return rel + lam * coh


NUMPY_IMPLS = {
    "hybrid_scores": np_hybrid_scores,
    "matvec": np_matvec,
    "row_dots": np_row_dots,
    "argmax_at": np_argmax_at,
    "scalarized_scores": np_scalarized_scores,
}


# -- numba implementations ----------------------------------------------------

njit = None
if not NUMBA_DISABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        njit = None

if njit is not None:

    @njit(cache=True)
    def nb_hybrid_scores(q, img, meta, alpha):
        n, d = img.shape
        out = np.empty(n)
        for i in range(n):
            s_img = 0.0
            s_meta = 0.0
            for j in range(d):
                s_img += img[i, j] * q[j]
                s_meta += meta[i, j] * q[j]
            out[i] = alpha * s_img + (1.0 - alpha) * s_meta
        return out

    @njit(cache=True)
    def nb_matvec(m, v):
        n, d = m.shape
        out = np.empty(n)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += m[i, j] * v[j]
            out[i] = s
        return out

    @njit(cache=True)
    def nb_row_dots(a, b):
        n, d = a.shape
        out = np.empty(n)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += a[i, j] * b[i, j]
            out[i] = s
        return out

    @njit(cache=True)
    def nb_argmax_at(values, indices):
        m = indices.shape[0]
        if m == 0:
            return -1
        best = indices[0]
        best_val = values[best]
        for k in range(1, m):
            j = indices[k]
            if values[j] > best_val:
                best = j
                best_val = values[j]
        return best

    @njit(cache=True)
    def nb_scalarized_scores(rel, coh, lam):
        n = rel.shape[0]
        out = np.empty(n)
        for j in range(n):
            out[j] = rel[j] + lam * coh[j]
        return out

    NUMBA_IMPLS = {
        "hybrid_scores": nb_hybrid_scores,
        "matvec": nb_matvec,
        "row_dots": nb_row_dots,
        "argmax_at": nb_argmax_at,
        "scalarized_scores": nb_scalarized_scores,
    }
else:
    NUMBA_IMPLS = None

USING_NUMBA = NUMBA_IMPLS is not None

_ACTIVE = NUMBA_IMPLS if USING_NUMBA else NUMPY_IMPLS

hybrid_scores = _ACTIVE["hybrid_scores"]
matvec = _ACTIVE["matvec"]
row_dots = _ACTIVE["row_dots"]
argmax_at = _ACTIVE["argmax_at"]
scalarized_scores = _ACTIVE["scalarized_scores"]


def as_kernel_matrix(m) -> np.ndarray:
    """Coerce to the float64 C-contiguous layout the kernels expect."""
    return np.ascontiguousarray(m, dtype=np.float64)


def as_kernel_vector(v) -> np.ndarray:
    return np.ascontiguousarray(v, dtype=np.float64)


def warmup() -> None:
    """Trigger jit compilation so first-use latency stays out of hot paths."""
    q = np.zeros(2)
    m = np.zeros((1, 2))
    hybrid_scores(q, m, m, 0.5)
    matvec(m, q)
    row_dots(m, m)
    argmax_at(np.zeros(1), np.zeros(1, dtype=np.int64))
    scalarized_scores(np.zeros(1), np.zeros(1), 0.5)
