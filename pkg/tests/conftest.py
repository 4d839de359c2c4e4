"""Shared test helpers: a table-driven embedder and constructed-geometry
world builders. Worlds are built on orthogonal axes so every inner
product in a test is known by construction."""

from __future__ import annotations

import numpy as np

from mepa.embedding import normalize
from mepa.store import KbEntry, KnowledgeBase, QueryCase


class StubEmbedder:
    """Embeds exactly the texts it was configured with; raw vectors out."""

    name = "stub-embedder"

    def __init__(self, table: dict):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}

    def embed_text(self, text: str) -> np.ndarray:
        return self.table[text].copy()

    def embed_texts(self, texts) -> list[np.ndarray]:
        return [self.embed_text(t) for t in texts]


def basis(d: int, i: int, scale: float = 1.0) -> np.ndarray:
    v = np.zeros(d)
    v[i] = scale
    return v


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def make_entry(
    eid: str,
    img,
    meta,
    image_ref: str | None = None,
    caption: str | None = None,
    poisoned: bool = False,
    payload: str | None = None,
) -> KbEntry:
    return KbEntry(
        id=eid,
        image_ref=image_ref if image_ref is not None else f"img/{eid}",
        metadata_text=caption if caption is not None else f"caption of {eid}",
        image_embedding=normalize(np.asarray(img, dtype=np.float64)),
        metadata_embedding=normalize(np.asarray(meta, dtype=np.float64)),
        poisoned=poisoned,
        payload_answer=payload,
    )


def make_query(
    qid: str,
    emb=None,
    gold=("g",),
    answers=("ans",),
    question: str | None = None,
    paraphrase: str | None = None,
    paraphrase_emb=None,
    target: str | None = None,
    scope=None,
    image_context: str | None = None,
) -> QueryCase:
    return QueryCase(
        id=qid,
        question=question if question is not None else f"question {qid}?",
        gold_entry_ids=frozenset(gold),
        gold_answers=tuple(answers),
        paraphrase=paraphrase,
        image_context=image_context,
        target_answer=target,
        scope_entry_ids=frozenset(scope) if scope is not None else None,
        query_embedding=(
            normalize(np.asarray(emb, dtype=np.float64)) if emb is not None else None
        ),
        paraphrase_embedding=(
            normalize(np.asarray(paraphrase_emb, dtype=np.float64))
            if paraphrase_emb is not None
            else None
        ),
    )


def poison_world(n_queries: int = 10, with_poisons: bool = True):
    """n queries on disjoint axes; per query a gold entry and (optionally)
    an injected poison that outranks it.

    Geometry, per query i with query axis u_i and image axis m_i:
      gold image  = m_i                      (query-image affinity 0)
      gold meta   = (m_i + u_i) / sqrt(2)    (query-meta affinity 1/sqrt 2)
      poison image = m_i (reused from gold); poison meta = u_i
    At any alpha < 1 the poison out-scores the gold on query i, and both
    score 0 for every other query. Gold answers never occur inside poison
    captions, so substring attack checks cannot fire on honest answers.
    """
    d = 2 * n_queries
    entries = []
    cases = []
    for i in range(n_queries):
        u = basis(d, 2 * i)       # query axis
        m = basis(d, 2 * i + 1)   # image axis
        gold_id = f"gold-{i:02d}"
        entries.append(
            make_entry(
                gold_id,
                img=m,
                meta=m + u,
                caption=f"scene number {i:02d} in daylight",
            )
        )
        if with_poisons:
            entries.append(
                make_entry(
                    f"poison-q{i:02d}",
                    img=m,
                    meta=u,
                    caption=f"scene number {i:02d} proving payload{i:02d} here",
                    poisoned=True,
                    payload=f"payload{i:02d}",
                )
            )
        cases.append(
            make_query(
                f"q{i:02d}",
                emb=u,
                gold=(gold_id,),
                answers=(f"truth{i:02d}",),
                target=f"payload{i:02d}" if with_poisons else None,
            )
        )
    return KnowledgeBase(entries), cases
