"""Pipeline commands.

    mepa embed           write embedding files for a KB (and queries)
    mepa gen-candidates  write attacker caption pools for targeted queries
    mepa attack          select captions, inject poisons, emit a poisoned KB
    mepa eval            retrieve + answer + score; clean, attacked,
                         paraphrased, or defended depending on flags
    mepa defend          image/metadata consistency report for a KB
    mepa report-diff     per-metric drop between two report files

Exit codes: 0 success, 2 bad configuration, 3 provider failure, 4 bad data.
A fixed --seed with mock providers makes every artifact reproducible
byte for byte, at any --jobs setting.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import attack as atk
from . import defense, evaluation, runner, store
from .attack import CandidatePool, CmoConfig
from .errors import DataError, MepaError, NoFeasibleCandidate
from .providers import (
    CANDIDATE_TEMPERATURE,
    EchoAnswerGenerator,
    HttpAnswerGenerator,
    HttpCandidateGenerator,
    HttpEmbedder,
    MockCandidateGenerator,
    MockEmbedder,
    ProviderConfig,
    RecordLog,
    map_ordered,
)
from .retrieval import RetrievalConfig


# -- shared flag groups --------------------------------------------------------

def _add_provider_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=("mock", "remote"), default="mock",
                   help="mock: deterministic offline providers; remote: HTTP service")
    p.add_argument("--model", default="mock", help="model name sent to the remote service")
    p.add_argument("--seed", type=int, default=0, help="seed for the mock embedder")
    p.add_argument("--dim", type=int, default=32, help="mock embedding dimension")


def _make_embedder(args, log: RecordLog | None):
    if args.provider == "remote":
        return HttpEmbedder(ProviderConfig.from_env(model=args.model), log=log)
    return MockEmbedder(seed=args.seed, dim=args.dim)


def _make_candidate_generator(args, cases, log: RecordLog | None):
    if args.provider == "remote":
        cfg = ProviderConfig.from_env(
            model=args.model, temperature=getattr(args, "temperature", CANDIDATE_TEMPERATURE)
        )
        return HttpCandidateGenerator(cfg, log=log)
    payloads = {
        q.question: q.target_answer for q in cases if q.target_answer is not None
    }
    return MockCandidateGenerator(payload_by_query=payloads, log=log)


def _load_resolved_kb(kb_path, images_path, meta_path) -> store.KnowledgeBase:
    return store.attach_embeddings(
        store.load_manifest(kb_path),
        store.load_embeddings(images_path),
        store.load_embeddings(meta_path),
    )


def _query_vectors(cases, args, embedder) -> dict:
    if getattr(args, "query_emb", None):
        return store.load_embeddings(args.query_emb)
    return {q.id: embedder.embed_text(q.question) for q in cases}


def _image_context(kb: store.KnowledgeBase, query: store.QueryCase) -> str:
    """Explicit context field when present, else the victim gold caption."""
    if query.image_context:
        return query.image_context
    return atk.victim_entry(kb, query).metadata_text


def _write_json(obj: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


# -- embed ---------------------------------------------------------------------

def cmd_embed(args) -> int:
    kb = store.load_manifest(args.kb)
    with RecordLog(args.records) if args.records else RecordLog() as log:
        embedder = _make_embedder(args, log)
        if len(kb) > 0:
            ids = [e.id for e in kb.entries]
            image_vecs = embedder.embed_texts([e.image_ref for e in kb.entries])
            meta_vecs = embedder.embed_texts([e.metadata_text for e in kb.entries])
            store.write_embeddings(args.out_images, dict(zip(ids, image_vecs)))
            store.write_embeddings(args.out_meta, dict(zip(ids, meta_vecs)))
        else:
            store.write_embeddings(args.out_images, {}, dim=args.dim)
            store.write_embeddings(args.out_meta, {}, dim=args.dim)
        n_queries = 0
        if args.queries:
            cases = store.load_queries(args.queries)
            n_queries = len(cases)
            if args.out_queries:
                store.write_embeddings(
                    args.out_queries,
                    {q.id: embedder.embed_text(q.question) for q in cases},
                    dim=args.dim,
                )
            if args.out_paraphrases:
                store.write_embeddings(
                    args.out_paraphrases,
                    {
                        q.id: embedder.embed_text(q.paraphrase)
                        for q in cases
                        if q.paraphrase is not None
                    },
                    dim=args.dim,
                )
    print(f"embedded {len(kb)} entries, {n_queries} queries")
    return 0


# -- gen-candidates ------------------------------------------------------------

def cmd_gen_candidates(args) -> int:
    kb = store.load_manifest(args.kb)
    cases = store.load_queries(args.queries)
    targeted = [q for q in cases if q.target_answer is not None]
    if not targeted:
        raise DataError("no query carries a target_answer; nothing to generate")
    with RecordLog(args.records) if args.records else RecordLog() as log:
        gen = _make_candidate_generator(args, cases, log)

        def one(q: store.QueryCase) -> list[str]:
            return gen.generate_candidates(
                _image_context(kb, q), q.question, q.gold_answers[0], args.n_candidates
            )

        pools = dict(zip(
            (q.id for q in targeted),
            map_ordered(one, targeted, args.jobs),
        ))
    atk.save_pools(pools, args.out)
    print(f"wrote {len(pools)} candidate pools ({args.n_candidates} each) to {args.out}")
    return 0


# -- attack --------------------------------------------------------------------

def cmd_attack(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raw_images = store.load_embeddings(args.images)
    raw_metas = store.load_embeddings(args.meta)
    kb = store.attach_embeddings(store.load_manifest(args.kb), raw_images, raw_metas)
    cases = store.load_queries(args.queries)
    cmo = CmoConfig(
        tau=args.tau, lam=args.lam, n_candidates=args.n_candidates, mode=args.mode
    )
    pools_file = atk.load_pools(args.pools) if args.pools else None

    with RecordLog(out / "records.jsonl") as log:
        embedder = _make_embedder(args, log)
        gen = None if pools_file else _make_candidate_generator(args, cases, log)
        qmap = _query_vectors(cases, args, embedder)
        cases = store.attach_query_embeddings(cases, qmap)
        targeted = [q for q in cases if q.target_answer is not None]

        def craft(q: store.QueryCase):
            """Select a caption for one query; no shared state touched."""
            if pools_file is not None:
                if q.id not in pools_file:
                    raise DataError(f"no candidate pool for query {q.id!r}")
                texts = pools_file[q.id]
            else:
                texts = gen.generate_candidates(
                    _image_context(kb, q), q.question, q.gold_answers[0], cmo.n_candidates
                )
            pool = CandidatePool.build(q.id, texts, embedder)
            pool.verify()
            victim = atk.victim_entry(kb, q)
            try:
                sel = atk.select_candidate(pool, q.query_embedding, victim.image_embedding, cmo)
                status = "ok"
            except NoFeasibleCandidate as exc:
                if args.fallback != "lagrangian":
                    return q, "infeasible", exc, None, None, None
                sel = atk.select_lagrangian(
                    pool, q.query_embedding, victim.image_embedding, cmo
                )
                status = "fallback-lagrangian"
            return q, status, None, sel, pool, victim

        crafted = map_ordered(craft, targeted, args.jobs)

    # sequential fold keeps injection order and ledger order deterministic
    crafted_by_id = {c[0].id: c[1:] for c in crafted}
    ledger_rows: list[dict] = []
    poisoned_kb = kb
    out_images = dict(raw_images)
    out_metas = dict(raw_metas)
    attacked_cases: list[store.QueryCase] = []
    injected = infeasible = skipped = 0
    for q in cases:
        if q.target_answer is None:
            ledger_rows.append(
                {"query_id": q.id, "status": "skipped", "reason": "no target_answer"}
            )
            attacked_cases.append(q)
            skipped += 1
            continue
        status, err, sel, pool, victim = crafted_by_id[q.id]
        if status == "infeasible":
            ledger_rows.append(
                {
                    "query_id": q.id,
                    "status": "infeasible",
                    "max_cohesion": err.max_cohesion,
                    "tau": cmo.tau,
                }
            )
            attacked_cases.append(q)
            infeasible += 1
            continue
        entry = atk.assemble_poison(kb, q, sel, pool.embedding_at(sel.index))
        poisoned_kb = store.inject_entry(poisoned_kb, entry)
        out_images[entry.id] = raw_images[victim.id]
        out_metas[entry.id] = pool.raw[sel.index]
        scope = q.scope_entry_ids
        attacked_cases.append(
            q if scope is None else replace(q, scope_entry_ids=scope | {entry.id})
        )
        ledger_rows.append(
            {
                "query_id": q.id,
                "status": status,
                "poison_id": entry.id,
                "text": sel.text,
                "relevance": sel.relevance,
                "cohesion": sel.cohesion,
                "objective": sel.objective,
                "mode": sel.mode,
                "feasible_count": sel.feasible_count,
            }
        )
        injected += 1

    store.save_manifest(poisoned_kb, out / "poisoned_kb.jsonl")
    store.write_embeddings(out / "poisoned_images.mepaemb", out_images)
    store.write_embeddings(out / "poisoned_meta.mepaemb", out_metas)
    store.save_queries(attacked_cases, out / "queries_attacked.jsonl")
    with open(out / "ledger.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for row in ledger_rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    _write_json(
        {
            "command": "attack",
            "tau": cmo.tau,
            "lambda": cmo.lam,
            "n_candidates": cmo.n_candidates,
            "mode": cmo.mode,
            "fallback": args.fallback,
            "provider": args.provider,
            "seed": args.seed,
            "dim": args.dim,
            "jobs": args.jobs,
            "counts": {"injected": injected, "infeasible": infeasible, "skipped": skipped},
        },
        out / "config.json",
    )
    print(f"injected {injected} poisons ({infeasible} infeasible, {skipped} skipped)")
    return 0


# -- eval ----------------------------------------------------------------------

def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kb = _load_resolved_kb(args.kb, args.images, args.meta)
    cases = store.load_queries(args.queries)

    with RecordLog(out / "records.jsonl") as log:
        embedder = _make_embedder(args, log)
        qmap = _query_vectors(cases, args, embedder)

        para_raw = None
        if args.paraphrase == "identity":
            cases = [replace(q, paraphrase=q.question) for q in cases]
            para_raw = qmap
        elif args.paraphrase == "manifest":
            if args.paraphrase_emb:
                para_raw = store.load_embeddings(args.paraphrase_emb)
            else:
                para_raw = {
                    q.id: embedder.embed_text(q.paraphrase)
                    for q in cases
                    if q.paraphrase is not None
                }
        cases = store.attach_query_embeddings(cases, qmap, para_raw)

        consistency = None
        if args.filter_flagged:
            consistency = defense.flag_below_threshold(
                defense.consistency_scores(kb), args.threshold
            )
            kb = defense.filter_flagged_kb(kb, consistency)
            cases = runner.restrict_scopes(cases, kb)

        if args.provider == "remote":
            answerer = HttpAnswerGenerator(
                ProviderConfig.from_env(model=args.model), log=log
            )
        else:
            answerer = EchoAnswerGenerator(log=log)

        attack_echo = {"tau": None, "lambda": None, "n_candidates": None, "mode": None}
        if args.attack_config:
            with open(args.attack_config, "r", encoding="utf-8") as fh:
                src = json.load(fh)
            for key in attack_echo:
                attack_echo[key] = src.get(key)

        config = {
            "alpha": args.alpha,
            "k": args.k,
            **attack_echo,
            "providers": {"embedder": embedder.name, "answerer": answerer.name},
            "seed": args.seed,
            "dim": args.dim,
            "paraphrased": args.paraphrase != "none",
            "paraphrase_mode": args.paraphrase,
            "filter_flagged": args.filter_flagged,
            "threshold": args.threshold if args.filter_flagged else None,
        }
        rcfg = RetrievalConfig(alpha=args.alpha, k=args.k)
        if args.paraphrase != "none":
            report = defense.paraphrased_run(
                cases, kb, rcfg, answerer, config, jobs=args.jobs
            )
        else:
            outcomes = runner.run_cases(cases, kb, rcfg, answerer, jobs=args.jobs)
            report = evaluation.build_report(config, outcomes)

    evaluation.write_report(report, out / "report.json")
    evaluation.write_outcomes_csv(report.outcomes, out / "outcomes.csv")
    if consistency is not None:
        defense.write_consistency_json(consistency, out / "consistency.json")
        defense.write_consistency_csv(consistency, out / "consistency.csv")
    _write_json({**config, "jobs": args.jobs}, out / "config.json")

    m = report.metrics
    def fmt(v):
        return "null" if v is None else f"{v:.4f}"
    print(
        f"queries={report.counts['queries']} "
        f"rorig_at_k={fmt(m['rorig_at_k'])} rpois_at_k={fmt(m['rpois_at_k'])} "
        f"acc={fmt(m['acc'])} asr={fmt(m['asr'])}"
    )
    return 0


# -- defend --------------------------------------------------------------------

def cmd_defend(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kb = _load_resolved_kb(args.kb, args.images, args.meta)
    report = defense.flag_below_threshold(defense.consistency_scores(kb), args.threshold)
    defense.write_consistency_json(report, out / "consistency.json")
    defense.write_consistency_csv(report, out / "consistency.csv")

    def fmt(v):
        return "null" if v is None else f"{v:.4f}"
    print(
        f"entries={len(report.records)} flagged={len(report.flagged_ids)} "
        f"clean_mean={fmt(report.clean_mean)} poison_mean={fmt(report.poison_mean)} "
        f"threshold={report.threshold}"
    )
    return 0


# -- report-diff ---------------------------------------------------------------

def cmd_report_diff(args) -> int:
    diff = evaluation.diff_reports(
        evaluation.load_report(args.baseline), evaluation.load_report(args.comparison)
    )
    text = json.dumps(diff, indent=2, ensure_ascii=False)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mepa",
        description="Metadata-poisoning harness for multimodal retrieval pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="write embedding files for a KB and queries")
    p.add_argument("--kb", required=True)
    p.add_argument("--out-images", required=True)
    p.add_argument("--out-meta", required=True)
    p.add_argument("--queries")
    p.add_argument("--out-queries")
    p.add_argument("--out-paraphrases")
    p.add_argument("--records", help="write provider call records to this JSONL file")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("gen-candidates", help="write attacker caption pools")
    p.add_argument("--kb", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-candidates", type=int, default=10)
    p.add_argument("--temperature", type=float, default=CANDIDATE_TEMPERATURE)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--records")
    _add_provider_flags(p)
    p.set_defaults(func=cmd_gen_candidates)

    p = sub.add_parser("attack", help="select captions and inject poisons")
    p.add_argument("--kb", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query-emb", help="MEPAEMB1 file of query vectors (else embedded live)")
    p.add_argument("--pools", help="candidate pool JSONL (else generated live)")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--n-candidates", type=int, default=10)
    p.add_argument("--mode", choices=atk.MODES, default="hard")
    p.add_argument("--fallback", choices=("none", "lagrangian"), default="none",
                   help="on an infeasible pool in hard mode, retry with the relaxed objective")
    p.add_argument("--temperature", type=float, default=CANDIDATE_TEMPERATURE)
    p.add_argument("--jobs", type=int, default=1)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("eval", help="retrieve, answer, and score")
    p.add_argument("--kb", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--query-emb")
    p.add_argument("--paraphrase-emb", help="MEPAEMB1 file of paraphrase vectors")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--paraphrase", choices=("none", "identity", "manifest"), default="none")
    p.add_argument("--filter-flagged", action="store_true",
                   help="drop consistency-flagged entries before retrieval")
    p.add_argument("--threshold", type=float, default=defense.DEFAULT_THRESHOLD)
    p.add_argument("--attack-config", help="attack config.json to echo into the report")
    p.add_argument("--jobs", type=int, default=1)
    _add_provider_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("defend", help="image/metadata consistency report")
    p.add_argument("--kb", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=defense.DEFAULT_THRESHOLD)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("report-diff", help="per-metric drop between two reports")
    p.add_argument("--baseline", required=True)
    p.add_argument("--comparison", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_diff)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MepaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
