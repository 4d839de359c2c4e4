"""Constrained caption selection and poison assembly.

The attacker controls exactly one thing: the metadata text of one new
entry. The image embedding is copied from a gold entry for the target
query, so image-side similarity is inherited rather than optimized.
Caption selection balances two inner products over a candidate pool:

* relevance  <query, candidate>   -- pulls the entry up the ranking
* cohesion   <image, candidate>   -- keeps text and image consistent,
                                     which is what defenses measure

Two selection modes are provided. Hard mode keeps only candidates with
cohesion >= tau and maximizes relevance over the survivors. Scalarized
mode maximizes relevance + lam * (cohesion - tau) over the whole pool,
trading the guarantee for feasibility on thin pools. As lam grows the
scalarized choice converges to the most cohesive candidate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .embedding import Embedding, normalize
from .errors import (
    ConfigError,
    DataError,
    DimMismatch,
    DuplicateId,
    MissingTargetAnswer,
    NoFeasibleCandidate,
    ParseError,
)
from .store import KbEntry, KnowledgeBase, QueryCase

MODES = ("hard", "lagrangian")

POISON_ID_PREFIX = "poison-"


@dataclass(frozen=True)
class CmoConfig:
    tau: float = 0.2
    lam: float = 0.5
    n_candidates: int = 10
    mode: str = "hard"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not -1.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [-1, 1], got {self.tau}")
        if self.lam < 0.0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.n_candidates < 1:
            raise ConfigError(f"n_candidates must be >= 1, got {self.n_candidates}")


class CandidatePool:
    """Candidate captions for one query, embedded as unit rows.

    ``raw`` keeps the provider's unnormalized vectors so the selected
    caption's embedding can be persisted exactly as produced.
    """

    def __init__(
        self,
        query_id: str,
        texts: tuple[str, ...],
        matrix: np.ndarray,
        raw: tuple[np.ndarray, ...] | None = None,
    ):
        self.query_id = query_id
        self.texts = texts
        self.matrix = _kernels.as_kernel_matrix(matrix)
        self.raw = raw

    @classmethod
    def build(cls, query_id: str, texts, embedder) -> "CandidatePool":
        texts = tuple(texts)
        if not texts:
            raise DataError(f"query {query_id!r}: empty candidate list")
        raw = tuple(np.asarray(embedder.embed_text(t), dtype=np.float64) for t in texts)
        rows = [normalize(v).values for v in raw]
        return cls(query_id, texts, np.stack(rows), raw=raw)

    def __len__(self) -> int:
        return len(self.texts)

    def embedding_at(self, index: int) -> Embedding:
        return normalize(self.matrix[index].copy())

    def verify(self) -> None:
        """Sanity-check pool geometry before running selection on it."""
        n, _ = self.matrix.shape
        if n != len(self.texts):
            raise DataError(
                f"pool for {self.query_id!r}: {len(self.texts)} texts, {n} rows"
            )
        if not np.all(np.isfinite(self.matrix)):
            raise DataError(f"pool for {self.query_id!r}: non-finite embedding values")
        norms = np.sqrt(np.einsum("ij,ij->i", self.matrix, self.matrix))
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise DataError(f"pool for {self.query_id!r}: rows are not unit vectors")


@dataclass(frozen=True)
class FeasibleSet:
    indices: np.ndarray   # positions into the pool, ascending
    cohesions: np.ndarray  # cohesion of every pool candidate, not just survivors

    def __len__(self) -> int:
        return int(self.indices.shape[0])


@dataclass(frozen=True)
class Selection:
    index: int
    text: str
    relevance: float
    cohesion: float
    objective: float
    mode: str
    feasible_count: int | None = None


def _check_dims(pool: CandidatePool, query: Embedding, image: Embedding) -> None:
    d = pool.matrix.shape[1]
    if query.dim != d or image.dim != d:
        raise DimMismatch(
            f"pool dim {d}, query dim {query.dim}, image dim {image.dim}"
        )


def filter_feasible(pool: CandidatePool, image: Embedding, tau: float) -> FeasibleSet:
    """Keep candidates whose image cohesion clears the floor."""
    coh = _kernels.matvec(pool.matrix, _kernels.as_kernel_vector(image.values))
    indices = np.flatnonzero(coh >= tau).astype(np.int64)
    return FeasibleSet(indices=indices, cohesions=coh)


def select_hard(
    pool: CandidatePool, query: Embedding, image: Embedding, cfg: CmoConfig
) -> Selection:
    """Most relevant candidate among those meeting the cohesion floor.

    Ties on relevance resolve to the lowest pool index.
    """
    _check_dims(pool, query, image)
    feasible = filter_feasible(pool, image, cfg.tau)
    if len(feasible) == 0:
        raise NoFeasibleCandidate(float(feasible.cohesions.max()), cfg.tau)
    rel = _kernels.matvec(pool.matrix, _kernels.as_kernel_vector(query.values))
    best = int(_kernels.argmax_at(rel, feasible.indices))
    return Selection(
        index=best,
        text=pool.texts[best],
        relevance=float(rel[best]),
        cohesion=float(feasible.cohesions[best]),
        objective=float(rel[best]),
        mode="hard",
        feasible_count=len(feasible),
    )


def lagrangian_objectives(
    pool: CandidatePool, query: Embedding, image: Embedding, cfg: CmoConfig
) -> np.ndarray:
    """Per-candidate scalarized objective, relevance + lam * (cohesion - tau).

    Computed from the two dot-product arrays directly; selection below uses
    the algebraically equal composite-vector route, and tests hold the two
    to within 1e-9 of each other.
    """
    rel = _kernels.matvec(pool.matrix, _kernels.as_kernel_vector(query.values))
    coh = _kernels.matvec(pool.matrix, _kernels.as_kernel_vector(image.values))
    return _kernels.scalarized_scores(rel, coh, cfg.lam) - cfg.lam * cfg.tau


def select_lagrangian(
    pool: CandidatePool, query: Embedding, image: Embedding, cfg: CmoConfig
) -> Selection:
    """Unconstrained maximizer of the scalarized objective.

    Scores every candidate against the single composite vector
    query + lam * image, which is one pass instead of two. Ties resolve
    to the lowest pool index.
    """
    _check_dims(pool, query, image)
    composite = _kernels.as_kernel_vector(
        query.values + cfg.lam * image.values
    )
    scores = _kernels.matvec(pool.matrix, composite)
    best = int(np.argmax(scores))
    rel = float(np.dot(pool.matrix[best], query.values))
    coh = float(np.dot(pool.matrix[best], image.values))
    return Selection(
        index=best,
        text=pool.texts[best],
        relevance=rel,
        cohesion=coh,
        objective=rel + cfg.lam * (coh - cfg.tau),
        mode="lagrangian",
        feasible_count=None,
    )


def select_candidate(
    pool: CandidatePool, query: Embedding, image: Embedding, cfg: CmoConfig
) -> Selection:
    if cfg.mode == "hard":
        return select_hard(pool, query, image, cfg)
    return select_lagrangian(pool, query, image, cfg)


# -- candidate pool files -----------------------------------------------------

def load_pools(path) -> dict[str, list[str]]:
    """Read a pool file: JSONL of {"query_id", "candidates": [text, ...]}."""
    pools: dict[str, list[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            try:
                qid = obj["query_id"]
                candidates = obj["candidates"]
            except (TypeError, KeyError):
                raise ParseError(
                    str(path), lineno, "expected keys 'query_id' and 'candidates'"
                ) from None
            if not isinstance(candidates, list) or not all(
                isinstance(c, str) for c in candidates
            ):
                raise ParseError(str(path), lineno, "candidates must be a list of strings")
            if not candidates:
                raise ParseError(str(path), lineno, f"empty candidate list for {qid!r}")
            if qid in pools:
                raise DuplicateId(qid)
            pools[str(qid)] = candidates
    return pools


def save_pools(pools: Mapping[str, Sequence[str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for qid, candidates in pools.items():
            fh.write(
                json.dumps(
                    {"query_id": qid, "candidates": list(candidates)},
                    ensure_ascii=False,
                )
                + "\n"
            )


# -- poison assembly ----------------------------------------------------------

def poison_id_for(query_id: str) -> str:
    return POISON_ID_PREFIX + query_id


def victim_entry(kb: KnowledgeBase, query: QueryCase) -> KbEntry:
    """Gold entry whose image the poison borrows (lowest id wins)."""
    for gid in sorted(query.gold_entry_ids):
        if gid in kb:
            return kb.entry(gid)
    raise DataError(
        f"query {query.id!r}: no gold entry present in the knowledge base"
    )


def assemble_poison(
    kb: KnowledgeBase,
    query: QueryCase,
    selection: Selection,
    metadata_embedding: Embedding,
) -> KbEntry:
    """Build the poisoned entry: victim's image, attacker's caption."""
    if query.target_answer is None:
        raise MissingTargetAnswer(query.id)
    victim = victim_entry(kb, query)
    return KbEntry(
        id=poison_id_for(query.id),
        image_ref=victim.image_ref,
        metadata_text=selection.text,
        image_embedding=victim.image_embedding,
        metadata_embedding=metadata_embedding,
        poisoned=True,
        payload_answer=query.target_answer,
    )
