"""Hybrid cross-modal retrieval over a resolved knowledge base.

Every entry is scored as a convex blend of two query affinities:

    score = alpha * <q, image> + (1 - alpha) * <q, metadata>

with all vectors unit-normalized at attach time, so inner products are
cosine similarities. Scoring is exhaustive; ranking sorts by score
descending with ascending id as the tie-break, which makes results
independent of insertion order and stable across runs. Top-k is the
k-prefix of the full ranking, so rank positions never move when k grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .embedding import Embedding, inner_product
from .errors import ConfigError, DataError, UnknownScopeId
from .store import KnowledgeBase


@dataclass(frozen=True)
class RetrievalConfig:
    alpha: float = 0.5
    k: int = 5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")


@dataclass(frozen=True)
class RankedResult:
    entry_id: str
    score: float
    rank: int  # 1-based position in the ranking


def hybrid_score(
    query: Embedding, image: Embedding, metadata: Embedding, alpha: float
) -> float:
    """Blended affinity of one query against one entry."""
    return alpha * inner_product(query, image) + (1.0 - alpha) * inner_product(
        query, metadata
    )


def rank_all(
    kb: KnowledgeBase,
    query: Embedding,
    cfg: RetrievalConfig,
    scope: frozenset[str] | None = None,
    scope_owner: str = "?",
) -> list[RankedResult]:
    """Score and rank every entry (or the scoped subset), best first."""
    ids, img, meta, rank = kb.matrices()
    q = _kernels.as_kernel_vector(query.values)
    if img.shape[1] != q.shape[0]:
        raise DataError(
            f"query dim {q.shape[0]} != knowledge base dim {img.shape[1]}"
        )
    scores = _kernels.hybrid_scores(q, img, meta, cfg.alpha)

    if scope is not None:
        for sid in scope:
            if sid not in kb:
                raise UnknownScopeId(scope_owner, sid)
        keep = [i for i, eid in enumerate(ids) if eid in scope]
        if not keep:
            return []
        idx = np.array(keep, dtype=np.int64)
        scores = scores[idx]
        rank = rank[idx]
        ids = tuple(ids[i] for i in keep)

    # lexsort keys are least-significant first: id rank breaks score ties.
    order = np.lexsort((rank, -scores))
    return [
        RankedResult(entry_id=ids[i], score=float(scores[i]), rank=pos + 1)
        for pos, i in enumerate(order)
    ]


def retrieve_topk(
    kb: KnowledgeBase,
    query: Embedding,
    cfg: RetrievalConfig,
    scope: frozenset[str] | None = None,
    scope_owner: str = "?",
) -> list[RankedResult]:
    """Top-k slice of the full ranking."""
    return rank_all(kb, query, cfg, scope=scope, scope_owner=scope_owner)[: cfg.k]


def ranks_of(results: Sequence[RankedResult], wanted: frozenset[str]) -> dict[str, int]:
    """Map each wanted id that appears in results to its 1-based rank."""
    return {r.entry_id: r.rank for r in results if r.entry_id in wanted}
