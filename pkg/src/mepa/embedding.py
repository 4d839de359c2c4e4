"""Vector geometry on the unit sphere.

All similarity math in the package runs on pre-normalized vectors, so the
inner product coincides with cosine similarity. Normalization happens exactly
once, at ingestion; accumulation is always float64 even when vectors arrive
as float32 from disk, so ranking ties are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, NonFinite, ZeroVector

UNIT_NORM_TOL = 1e-6
_ZERO_NORM = 1e-12


@dataclass(frozen=True, eq=False)
class Embedding:
    """Immutable 1-D float64 vector."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise NonFinite("embedding must be a non-empty 1-D vector")
        if not np.all(np.isfinite(v)):
            raise NonFinite("embedding contains NaN or infinity")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def is_unit(self, tol: float = UNIT_NORM_TOL) -> bool:
        return abs(float(np.linalg.norm(self.values)) - 1.0) <= tol


def normalize(v) -> Embedding:
    """Scale a raw vector to unit Euclidean norm, preserving direction.

    Raises ZeroVector for degenerate input and NonFinite for NaN/inf
    components.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise NonFinite("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise NonFinite("vector contains NaN or infinity")
    norm = float(np.linalg.norm(arr))
    if norm <= _ZERO_NORM:
        raise ZeroVector(f"norm {norm:g} too small to normalize")
    return Embedding(arr / norm)


def inner_product(a: Embedding, b: Embedding) -> float:
    """Standard inner product; equals cosine similarity for unit vectors."""
    if a.dim != b.dim:
        raise DimMismatch(f"dims differ: {a.dim} vs {b.dim}")
    return float(np.dot(a.values, b.values))
