"""Per-query evaluation loop shared by every run variant.

For each query: retrieve top-k over its scope, hand the retrieved
captions to the answer generator as evidence, and score the outcome.
Queries are independent, so the loop parallelizes under a jobs cap with
results restored to input order; reruns are bit-identical at any jobs
setting.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from .attack import POISON_ID_PREFIX
from .errors import DataError, MissingParaphrase
from .evaluation import QueryOutcome, build_outcome
from .providers import EvidenceItem, map_ordered
from .retrieval import RetrievalConfig, retrieve_topk
from .store import KbEntry, KnowledgeBase, QueryCase


def poison_index_from_kb(kb: KnowledgeBase) -> dict[str, KbEntry]:
    """Map query id -> its injected poison, by the poison id convention."""
    out: dict[str, KbEntry] = {}
    for e in kb.entries:
        if e.poisoned and e.id.startswith(POISON_ID_PREFIX):
            out[e.id[len(POISON_ID_PREFIX):]] = e
    return out


def restrict_scopes(cases: Sequence[QueryCase], kb: KnowledgeBase) -> list[QueryCase]:
    """Intersect per-query scopes with the surviving KB ids.

    Needed after a defense filter removes entries that scopes still name;
    unscoped queries are left alone.
    """
    kept = []
    for q in cases:
        if q.scope_entry_ids is None:
            kept.append(q)
        else:
            kept.append(
                replace(
                    q,
                    scope_entry_ids=frozenset(
                        s for s in q.scope_entry_ids if s in kb
                    ),
                )
            )
    return kept


def run_cases(
    cases: Sequence[QueryCase],
    kb: KnowledgeBase,
    retrieval_cfg: RetrievalConfig,
    answerer,
    jobs: int = 1,
    use_paraphrase: bool = False,
) -> list[QueryOutcome]:
    poison_map = poison_index_from_kb(kb)

    def one(query: QueryCase) -> QueryOutcome:
        if use_paraphrase:
            if query.paraphrase is None or query.paraphrase_embedding is None:
                raise MissingParaphrase(query.id)
            question, emb = query.paraphrase, query.paraphrase_embedding
        else:
            question, emb = query.question, query.query_embedding
        if emb is None:
            raise DataError(f"query {query.id!r} has no embedding attached")
        results = retrieve_topk(
            kb, emb, retrieval_cfg, scope=query.scope_entry_ids, scope_owner=query.id
        )
        first_gold = query.gold_answers[0]
        evidence = []
        for r in results:
            e = kb.entry(r.entry_id)
            evidence.append(
                EvidenceItem(
                    entry_id=e.id,
                    caption=e.metadata_text,
                    image_ref=e.image_ref,
                    poisoned=e.poisoned,
                    payload_answer=e.payload_answer,
                    gold_answer=first_gold if e.id in query.gold_entry_ids else None,
                )
            )
        answer = answerer.generate_answer(question, evidence)
        poison = poison_map.get(query.id)
        return build_outcome(
            query,
            [r.entry_id for r in results],
            answer,
            poison_id=poison.id if poison is not None else None,
            poison_caption=poison.metadata_text if poison is not None else None,
        )

    return map_ordered(one, cases, jobs)
