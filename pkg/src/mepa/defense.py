"""Two defenses against metadata poisoning, as evaluated by the harness.

Consistency checking scores every entry by the inner product of its own
image and metadata embeddings (its cohesion) and flags entries below a
threshold. Because the attack selects captions under exactly this
constraint, poisons crafted with a cohesion floor at or above the
detection threshold pass the check by construction.

Query paraphrasing re-runs the evaluation with paraphrased queries
against the same poisoned store, probing whether the attack overfits to
the original query wording.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from typing import Sequence

from . import _kernels, runner
from .errors import ConfigError
from .evaluation import EvalReport, build_report
from .retrieval import RetrievalConfig
from .store import KnowledgeBase, QueryCase

DEFAULT_THRESHOLD = 0.2


@dataclass(frozen=True)
class ConsistencyRecord:
    entry_id: str
    poisoned: bool
    cohesion: float


@dataclass(frozen=True)
class ConsistencyReport:
    records: tuple[ConsistencyRecord, ...]
    clean_mean: float | None
    poison_mean: float | None
    threshold: float | None = None
    flagged_ids: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "clean_mean": self.clean_mean,
            "poison_mean": self.poison_mean,
            "flagged_ids": list(self.flagged_ids),
            "records": [
                {"entry_id": r.entry_id, "poisoned": r.poisoned, "cohesion": r.cohesion}
                for r in self.records
            ],
        }


def consistency_scores(kb: KnowledgeBase) -> ConsistencyReport:
    """Per-entry image/metadata cohesion plus clean and poisoned group means."""
    ids, img, meta, _ = kb.matrices()
    coh = _kernels.row_dots(img, meta)
    records = tuple(
        ConsistencyRecord(entry_id=ids[i], poisoned=kb.entries[i].poisoned, cohesion=float(coh[i]))
        for i in range(len(ids))
    )
    clean = [r.cohesion for r in records if not r.poisoned]
    poisoned = [r.cohesion for r in records if r.poisoned]
    return ConsistencyReport(
        records=records,
        clean_mean=sum(clean) / len(clean) if clean else None,
        poison_mean=sum(poisoned) / len(poisoned) if poisoned else None,
    )


def flag_below_threshold(
    report: ConsistencyReport, threshold: float = DEFAULT_THRESHOLD
) -> ConsistencyReport:
    """Mark every entry whose cohesion falls strictly below the threshold."""
    if not -1.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [-1, 1], got {threshold}")
    flagged = tuple(r.entry_id for r in report.records if r.cohesion < threshold)
    return replace(report, threshold=threshold, flagged_ids=flagged)


def filter_flagged_kb(kb: KnowledgeBase, report: ConsistencyReport) -> KnowledgeBase:
    """Drop flagged entries; an opt-in step, flagging alone never removes."""
    flagged = set(report.flagged_ids)
    return KnowledgeBase(e for e in kb.entries if e.id not in flagged)


def write_consistency_json(report: ConsistencyReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n")


def write_consistency_csv(report: ConsistencyReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["entry_id", "poisoned", "cohesion"])
        for r in report.records:
            writer.writerow([r.entry_id, int(r.poisoned), repr(r.cohesion)])


def paraphrased_run(
    cases: Sequence[QueryCase],
    kb: KnowledgeBase,
    retrieval_cfg: RetrievalConfig,
    answerer,
    config: dict,
    jobs: int = 1,
) -> EvalReport:
    """Standard evaluation, but retrieving with paraphrase embeddings and
    answering the paraphrased question text."""
    outcomes = runner.run_cases(
        cases, kb, retrieval_cfg, answerer, jobs=jobs, use_paraphrase=True
    )
    return build_report({**config, "paraphrased": True}, outcomes)
