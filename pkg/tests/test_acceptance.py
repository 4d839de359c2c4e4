"""Acceptance gate: one test per shipped guarantee, pass/fail per line.

Tolerances are pinned here on purpose; loosening one is a behavior change,
not a test fix. Everything runs against mock providers only.
"""
import dataclasses
import json
import time

import numpy as np
import pytest

from conftest import basis, make_entry, make_query, poison_world, unit_rows
from test_cli import build_world, per_query_max_cohesion
from mepa import attack as atk
from mepa.attack import CandidatePool, CmoConfig
from mepa.cli import main
from mepa.defense import consistency_scores, flag_below_threshold, paraphrased_run
from mepa.embedding import normalize
from mepa.errors import NoFeasibleCandidate
from mepa.evaluation import (
    asr,
    build_outcome,
    build_report,
    exact_match_acc,
    normalize_answer,
    rorig_at_k,
    rpois_at_k,
)
from mepa.providers import EchoAnswerGenerator
from mepa.retrieval import RetrievalConfig, hybrid_score, retrieve_topk
from mepa.runner import run_cases
from mepa.store import (
    KnowledgeBase,
    inject_entry,
    load_embeddings,
    load_manifest,
    load_queries,
    save_manifest,
    save_queries,
    write_embeddings,
)

LAMBDA_GRID = (0.0, 0.1, 0.5, 1.0, 5.0, 1e6)
SQRT2 = float(np.sqrt(2.0))


def unit(rng, d):
    return unit_rows(rng, 1, d)[0]


def test_hard_mode_selection_matches_exhaustive_oracle_on_1000_trials():
    rng = np.random.default_rng(1001)
    d, n = 8, 100
    texts = tuple(f"c{i}" for i in range(n))

    # untimed warmup so one-time kernel setup stays out of the budget
    warm = CandidatePool("warm", texts, unit_rows(rng, n, d))
    atk.select_hard(
        warm, normalize(unit(rng, d)), normalize(unit(rng, d)), CmoConfig(tau=-1.0)
    )

    infeasible = 0
    start = time.perf_counter()
    for trial in range(1000):
        pool = CandidatePool(f"t{trial}", texts, unit_rows(rng, n, d))
        query = normalize(unit(rng, d))
        image = normalize(unit(rng, d))
        tau = float(rng.uniform(-0.2, 0.5))

        best, best_rel = None, -np.inf
        for i in range(n):
            if float(np.dot(pool.matrix[i], image.values)) >= tau:
                rel = float(np.dot(pool.matrix[i], query.values))
                if rel > best_rel:
                    best, best_rel = i, rel
        if best is None:
            with pytest.raises(NoFeasibleCandidate):
                atk.select_hard(pool, query, image, CmoConfig(tau=tau))
            infeasible += 1
            continue
        sel = atk.select_hard(pool, query, image, CmoConfig(tau=tau))
        assert sel.index == best
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"1000 oracle trials took {elapsed:.2f}s"
    assert infeasible < 1000


def test_lagrangian_selection_optimal_monotone_and_route_consistent():
    rng = np.random.default_rng(1002)
    d = 8
    for run in range(200):
        n = int(rng.integers(2, 41))
        texts = tuple(f"c{i}" for i in range(n))
        pool = CandidatePool(f"p{run}", texts, unit_rows(rng, n, d))
        query = normalize(unit(rng, d))
        image = normalize(unit(rng, d))
        tau = float(rng.uniform(-0.2, 0.5))

        rel = [float(np.dot(pool.matrix[i], query.values)) for i in range(n)]
        unconstrained = max(range(n), key=lambda i: (rel[i], -i))

        prev_coh, prev_rel = -np.inf, np.inf
        for lam in LAMBDA_GRID:
            cfg = CmoConfig(tau=tau, lam=lam, mode="lagrangian")
            sel = atk.select_lagrangian(pool, query, image, cfg)
            objs = atk.lagrangian_objectives(pool, query, image, cfg)
            # (a) no candidate scores above the selected one
            assert sel.objective >= float(objs.max()) - 1e-9
            # (d) composite-vector route agrees with the two-dot route
            assert abs(sel.objective - float(objs[sel.index])) <= 1e-9
            # (b) multiplier sweep trades relevance for cohesion monotonically
            assert sel.cohesion >= prev_coh - 1e-9
            assert sel.relevance <= prev_rel + 1e-9
            prev_coh, prev_rel = sel.cohesion, sel.relevance
            if lam == 0.0:
                # (c) zero multiplier reduces to the plain relevance argmax
                assert sel.index == unconstrained


def test_topk_matches_bruteforce_sort_oracle_and_alpha_blend_is_affine():
    rng = np.random.default_rng(1003)
    d = 8
    for run in range(500):
        n = int(rng.integers(1, 1001)) if run % 10 == 0 else int(rng.integers(1, 120))
        ids = [f"e{v:04d}" for v in rng.choice(9000, size=n, replace=False)]
        vecs = [(unit(rng, d), unit(rng, d)) for _ in range(n)]
        if n >= 2 and rng.random() < 0.5:
            vecs[-1] = (vecs[0][0].copy(), vecs[0][1].copy())  # exact score tie
        kb = KnowledgeBase(
            [make_entry(eid, img, meta) for eid, (img, meta) in zip(ids, vecs)]
        )
        query = normalize(unit(rng, d))
        alpha = float(rng.uniform())
        cfg = RetrievalConfig(alpha=alpha, k=int(rng.integers(1, 11)))

        def score(entry):
            return alpha * float(
                np.dot(query.values, entry.image_embedding.values)
            ) + (1.0 - alpha) * float(
                np.dot(query.values, entry.metadata_embedding.values)
            )

        oracle = sorted(kb.entries, key=lambda e: (-score(e), e.id))
        got = retrieve_topk(kb, query, cfg)
        assert [r.entry_id for r in got] == [e.id for e in oracle[: cfg.k]]
        assert [r.rank for r in got] == list(range(1, len(got) + 1))
        for r, e in zip(got, oracle):
            assert r.score == pytest.approx(score(e), abs=1e-9)

    for _ in range(100):
        q, img, meta = (normalize(unit(rng, 4)) for _ in range(3))
        visual = hybrid_score(q, img, meta, 1.0)
        textual = hybrid_score(q, img, meta, 0.0)
        for alpha in (0.0, 0.25, 0.5, 0.75, 1.0):
            blended = hybrid_score(q, img, meta, alpha)
            assert abs(blended - (alpha * visual + (1 - alpha) * textual)) <= 1e-9


def _planted_outcome(i, gold_hit, poison_hit, correct, success):
    case = make_query(
        f"q{i:03d}",
        gold=(f"g{i:03d}",),
        answers=(f"truth{i:03d}",),
        target=f"victory{i:03d}",
    )
    retrieved = ["filler-a", "filler-b"]
    if gold_hit:
        retrieved.insert(0, f"g{i:03d}")
    if poison_hit:
        retrieved.insert(0, f"poison-q{i:03d}")
    if success:
        answer = f"victory{i:03d}"
    elif correct:
        answer = f"truth{i:03d}"
    else:
        answer = "mumble"
    return build_outcome(
        case,
        retrieved,
        answer,
        poison_id=f"poison-q{i:03d}",
        poison_caption=f"poster proving victory{i:03d} here",
    )


def test_planted_outcome_counts_give_exact_metric_fractions():
    pois = [
        _planted_outcome(i, gold_hit=False, poison_hit=i < 80, correct=False, success=False)
        for i in range(100)
    ]
    assert rpois_at_k(pois) == 80 / 100 == 0.80

    golds = [
        _planted_outcome(i, gold_hit=i < 65, poison_hit=False, correct=False, success=False)
        for i in range(100)
    ]
    assert rorig_at_k(golds) == 65 / 100 == 0.65

    accs = [
        _planted_outcome(i, gold_hit=True, poison_hit=False, correct=i < 13, success=False)
        for i in range(20)
    ]
    assert exact_match_acc(accs) == 13 / 20

    wins = [
        _planted_outcome(i, gold_hit=False, poison_hit=True, correct=False, success=i < 9)
        for i in range(10)
    ]
    assert asr(wins) == 9 / 10 == 0.9

    mixed = [
        _planted_outcome(
            i,
            gold_hit=i % 2 == 0,
            poison_hit=i % 4 == 0,
            correct=False,
            success=i % 5 == 0,
        )
        for i in range(100)
    ]
    assert rorig_at_k(mixed) == 50 / 100
    assert rpois_at_k(mixed) == 25 / 100
    assert asr(mixed) == 20 / 100


def _blockworld(n, poison_misses=frozenset(), gold_misses=frozenset(), attacked=True):
    """Per-query orthogonal axis pairs, so only a query's own entries can
    score for it; zero-score filler never reaches a poison (needs n >= 6)."""
    assert n >= 6
    d = 2 * n + 1
    junk = d - 1
    entries, cases = [], []
    for i in range(n):
        u, m = basis(d, 2 * i), basis(d, 2 * i + 1)
        entries.append(
            make_entry(
                f"gold-{i:02d}", m, (u + m) / SQRT2,
                caption=f"scene {i:02d} in daylight",
            )
        )
        if attacked:
            meta = basis(d, junk) if i in poison_misses else u
            entries.append(
                make_entry(
                    f"poison-q{i:02d}", m, meta,
                    caption=f"scene {i:02d} proving payload{i:02d} here",
                    poisoned=True,
                    payload=f"payload{i:02d}",
                )
            )
        if i in gold_misses:
            for j in range(5):
                entries.append(
                    make_entry(f"dull-{i:02d}-{j}", basis(d, junk), u, caption="filler")
                )
        cases.append(
            make_query(
                f"q{i:02d}", emb=u,
                gold=(f"gold-{i:02d}",),
                answers=(f"truth{i:02d}",),
                target=f"payload{i:02d}",
            )
        )
    return KnowledgeBase(entries), cases


def test_echo_pipeline_asr_equals_poison_retrieval_rate_on_synthetic_runs():
    rng = np.random.default_rng(1005)
    cfg = RetrievalConfig(alpha=0.5, k=5)
    for _ in range(12):
        n = int(rng.integers(6, 13))
        miss = frozenset(
            int(v) for v in rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False)
        )
        kb, cases = _blockworld(n, poison_misses=miss)
        outcomes = run_cases(cases, kb, cfg, EchoAnswerGenerator())
        assert rpois_at_k(outcomes) == (n - len(miss)) / n
        assert asr(outcomes) == rpois_at_k(outcomes)
        counts = build_report({"alpha": 0.5, "k": 5}, outcomes).to_dict()["counts"]
        assert counts["poison_retrieved"] == counts["attack_success"] == n - len(miss)

    for _ in range(8):
        n = int(rng.integers(6, 13))
        miss = frozenset(
            int(v) for v in rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False)
        )
        kb, cases = _blockworld(n, gold_misses=miss, attacked=False)
        outcomes = run_cases(cases, kb, cfg, EchoAnswerGenerator())
        assert rorig_at_k(outcomes) == (n - len(miss)) / n
        assert exact_match_acc(outcomes) == rorig_at_k(outcomes)


def test_hard_mode_poisons_pass_consistency_screen_at_same_threshold():
    rng = np.random.default_rng(1006)
    tau = 0.2
    margins = (1e-12, 1e-9, 1e-6, 1e-3, 0.1, 0.3)
    for round_no in range(40):
        d = 64
        next_axis = 0

        def take():
            nonlocal next_axis
            next_axis += 1
            return next_axis - 1

        n_clean = int(rng.integers(3, 9))
        n_queries = int(rng.integers(1, 5))
        entries = []
        planted_low = []
        for c in range(n_clean):
            a, b = take(), take()
            coh = (
                float(rng.uniform(-0.4, 0.19))
                if c % 2
                else float(rng.uniform(0.21, 0.95))
            )
            if c % 2:
                planted_low.append(f"clean-{c}")
            meta = coh * basis(d, a) + np.sqrt(1.0 - coh**2) * basis(d, b)
            entries.append(make_entry(f"clean-{c}", basis(d, a), meta))

        victims = []
        for v in range(n_queries):
            a, b = take(), take()
            meta = 0.6 * basis(d, a) + 0.8 * basis(d, b)
            entries.append(make_entry(f"victim-{v}", basis(d, a), meta))
            victims.append((f"victim-{v}", a))

        kb = KnowledgeBase(entries)
        for v, (victim_id, img_axis) in enumerate(victims):
            rows, texts = [], []
            for j in range(6):
                if j == 0:
                    coh = tau + margins[(round_no + v) % len(margins)]
                else:
                    coh = float(rng.uniform(-0.4, 0.8))
                rows.append(
                    coh * basis(d, img_axis) + np.sqrt(1.0 - coh**2) * basis(d, take())
                )
                texts.append(f"lure caption {v}-{j}")
            pool = CandidatePool(f"pool-{v}", tuple(texts), np.stack(rows))
            case = make_query(
                f"rq{v}", emb=unit(rng, d), gold=(victim_id,), target=f"lure{v}"
            )
            sel = atk.select_hard(
                pool, case.query_embedding, kb.entry(victim_id).image_embedding,
                CmoConfig(tau=tau),
            )
            assert sel.cohesion >= tau
            poison = atk.assemble_poison(kb, case, sel, pool.embedding_at(sel.index))
            kb = inject_entry(kb, poison)

        screened = flag_below_threshold(consistency_scores(kb), tau)
        flagged = set(screened.flagged_ids)
        poison_ids = {e.id for e in kb.entries if e.poisoned}
        assert flagged & poison_ids == set()
        assert set(planted_low) <= flagged  # the screen itself is live


def test_identity_paraphrase_is_bit_stable_and_planted_shift_is_exact():
    n = 8
    kb, cases = poison_world(n)
    cases = [
        dataclasses.replace(c, paraphrase=c.question, paraphrase_embedding=c.query_embedding)
        for c in cases
    ]
    cfg = RetrievalConfig(alpha=0.5, k=5)
    echo = EchoAnswerGenerator()
    base = {"alpha": 0.5, "k": 5}

    plain = build_report(base, run_cases(cases, kb, cfg, echo)).to_dict()
    para = paraphrased_run(cases, kb, cfg, echo, base).to_dict()
    assert json.dumps(plain["metrics"], sort_keys=True) == json.dumps(
        para["metrics"], sort_keys=True
    )
    assert plain["outcomes"] == para["outcomes"]
    assert plain["counts"] == para["counts"]
    assert para["metrics"]["rpois_at_k"] == 1.0

    moved = {1, 4, 6}
    shifted = [
        dataclasses.replace(
            c, paraphrase_embedding=normalize(basis(2 * n, 2 * ((i + 1) % n)))
        )
        if i in moved
        else c
        for i, c in enumerate(cases)
    ]
    pert = paraphrased_run(shifted, kb, cfg, echo, base).to_dict()
    assert pert["counts"]["poison_retrieved"] == n - len(moved)
    assert pert["metrics"]["rpois_at_k"] == (n - len(moved)) / n
    assert para["metrics"]["rpois_at_k"] - pert["metrics"]["rpois_at_k"] == len(moved) / n


def test_file_formats_roundtrip_bytes_and_reports_survive_rerun_and_jobs(tmp_path):
    rng = np.random.default_rng(1008)
    vectors = {f"idé-{i}": rng.standard_normal(12).astype(np.float32) for i in range(7)}
    first = tmp_path / "a.emb"
    write_embeddings(first, vectors)
    loaded = load_embeddings(first)
    assert set(loaded) == set(vectors)
    assert all(np.array_equal(loaded[k], vectors[k]) for k in vectors)
    second = tmp_path / "b.emb"
    write_embeddings(second, loaded)
    assert second.read_bytes() == first.read_bytes()

    kb, cases = poison_world(4)
    m1, m2 = tmp_path / "kb1.jsonl", tmp_path / "kb2.jsonl"
    save_manifest(kb, m1)
    save_manifest(load_manifest(m1), m2)
    assert m2.read_bytes() == m1.read_bytes()
    q1, q2 = tmp_path / "cases1.jsonl", tmp_path / "cases2.jsonl"
    save_queries(cases, q1)
    save_queries(load_queries(q1), q2)
    assert q2.read_bytes() == q1.read_bytes()

    world = build_world(tmp_path)
    assert main(
        ["embed", "--kb", world["kb"], "--out-images", world["images"],
         "--out-meta", world["meta"], "--queries", world["queries"],
         "--out-queries", world["qemb"]]
    ) == 0
    tau = min(per_query_max_cohesion().values()) - 1e-6
    attacks = [tmp_path / "atk1", tmp_path / "atk2"]
    for out in attacks:
        assert main(
            ["attack", "--kb", world["kb"], "--images", world["images"],
             "--meta", world["meta"], "--queries", world["queries"],
             "--query-emb", world["qemb"], "--out", str(out), "--tau", repr(tau)]
        ) == 0
    for name in ("poisoned_kb.jsonl", "ledger.jsonl", "poisoned_images.mepaemb",
                 "poisoned_meta.mepaemb"):
        assert (attacks[0] / name).read_bytes() == (attacks[1] / name).read_bytes()

    evals = [(tmp_path / "ev1", "1"), (tmp_path / "ev2", "4"), (tmp_path / "ev3", "1")]
    for out, jobs in evals:
        assert main(
            ["eval", "--kb", str(attacks[0] / "poisoned_kb.jsonl"),
             "--images", str(attacks[0] / "poisoned_images.mepaemb"),
             "--meta", str(attacks[0] / "poisoned_meta.mepaemb"),
             "--queries", str(attacks[0] / "queries_attacked.jsonl"),
             "--query-emb", world["qemb"], "--out", str(out), "--jobs", jobs]
        ) == 0
    for name in ("report.json", "outcomes.csv"):
        blobs = {(out / name).read_bytes() for out, _ in evals}
        assert len(blobs) == 1


NORMALIZATION_TABLE = [
    ("Paris", "paris"),
    ("PARIS", "paris"),
    ("MiXeD CaSe", "mixed case"),
    ("hello!", "hello"),
    ("what?!?", "what"),
    ("semi;colon", "semicolon"),
    ("co-operate", "cooperate"),
    ("it's", "its"),
    ("«quoted»", "quoted"),
    ("wait...", "wait"),
    ("the cat", "cat"),
    ("a dog", "dog"),
    ("an owl", "owl"),
    ("The The", ""),
    ("theater", "theater"),
    ("a", ""),
    ("another answer", "another answer"),
    ("  leading", "leading"),
    ("trailing   ", "trailing"),
    ("double  space", "double space"),
    ("tab\there", "tab here"),
    ("new\nline", "new line"),
    ("A  Margherita   Pizza!", "margherita pizza"),
    ("The U.S.A.", "usa"),
    ("  An   ODD answer…  ", "odd answer"),
]


def test_answer_normalization_twenty_five_case_table():
    assert len(NORMALIZATION_TABLE) == 25
    for raw, want in NORMALIZATION_TABLE:
        assert normalize_answer(raw) == want, f"normalize_answer({raw!r})"
