import numpy as np
import pytest

from conftest import basis, make_entry, unit_rows
from mepa.embedding import normalize
from mepa.errors import ConfigError, DataError, UnknownScopeId
from mepa.retrieval import (
    RankedResult,
    RetrievalConfig,
    hybrid_score,
    rank_all,
    ranks_of,
    retrieve_topk,
)
from mepa.store import KnowledgeBase


def sort_oracle(kb, q, alpha):
    """Score every entry with plain python floats, sort by (-score, id)."""
    rows = []
    for e in kb.entries:
        s = alpha * float(np.dot(q.values, e.image_embedding.values)) + (
            1 - alpha
        ) * float(np.dot(q.values, e.metadata_embedding.values))
        rows.append((e.id, s))
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows


class TestConfig:
    @pytest.mark.parametrize("alpha", [-0.1, 1.1, 2.0])
    def test_alpha_out_of_range(self, alpha):
        with pytest.raises(ConfigError):
            RetrievalConfig(alpha=alpha)

    @pytest.mark.parametrize("k", [0, -3])
    def test_k_must_be_positive(self, k):
        with pytest.raises(ConfigError):
            RetrievalConfig(k=k)

    def test_boundary_alphas_allowed(self):
        RetrievalConfig(alpha=0.0)
        RetrievalConfig(alpha=1.0)

    def test_defaults(self):
        cfg = RetrievalConfig()
        assert (cfg.alpha, cfg.k) == (0.5, 5)


class TestHybridScore:
    def test_hand_evaluated_blend(self):
        q = normalize(basis(2, 0))
        img = normalize(np.array([1.0, 1.0]))   # <q,img> = 1/sqrt2
        meta = normalize(basis(2, 0))           # <q,meta> = 1
        got = hybrid_score(q, img, meta, alpha=0.25)
        want = 0.25 * (1 / np.sqrt(2)) + 0.75 * 1.0
        assert got == pytest.approx(want, abs=1e-12)

    def test_alpha_zero_ignores_image(self):
        q = normalize(basis(3, 0))
        img = normalize(basis(3, 1))
        meta = normalize(basis(3, 0))
        assert hybrid_score(q, img, meta, 0.0) == 1.0

    def test_alpha_one_ignores_metadata(self):
        q = normalize(basis(3, 0))
        img = normalize(basis(3, 0))
        meta = normalize(basis(3, 2))
        assert hybrid_score(q, img, meta, 1.0) == 1.0


class TestRankAll:
    def _kb(self):
        # scores at alpha=0.5 and q = axis 0:
        #   near:  img axis0, meta axis0 -> 1.0
        #   mid:   img axis0, meta axis1 -> 0.5
        #   far:   img axis1, meta axis1 -> 0.0
        return KnowledgeBase(
            [
                make_entry("mid", basis(2, 0), basis(2, 1)),
                make_entry("far", basis(2, 1), basis(2, 1)),
                make_entry("near", basis(2, 0), basis(2, 0)),
            ]
        )

    def test_order_and_scores(self):
        out = rank_all(self._kb(), normalize(basis(2, 0)), RetrievalConfig())
        assert [r.entry_id for r in out] == ["near", "mid", "far"]
        assert [r.score for r in out] == pytest.approx([1.0, 0.5, 0.0], abs=1e-12)
        assert [r.rank for r in out] == [1, 2, 3]

    def test_exact_ties_break_by_ascending_id(self):
        kb = KnowledgeBase(
            [
                make_entry("b-entry", basis(2, 0), basis(2, 0)),
                make_entry("a-entry", basis(2, 0), basis(2, 0)),
                make_entry("c-entry", basis(2, 1), basis(2, 1)),
            ]
        )
        out = rank_all(kb, normalize(basis(2, 0)), RetrievalConfig())
        assert [r.entry_id for r in out] == ["a-entry", "b-entry", "c-entry"]

    def test_insertion_order_invariance(self):
        rng = np.random.default_rng(11)
        d = 6
        imgs = unit_rows(rng, 9, d)
        metas = unit_rows(rng, 9, d)
        entries = [make_entry(f"e{i}", imgs[i], metas[i]) for i in range(9)]
        q = normalize(rng.standard_normal(d))
        base = rank_all(KnowledgeBase(entries), q, RetrievalConfig())
        perm = [entries[i] for i in rng.permutation(9)]
        shuffled = rank_all(KnowledgeBase(perm), q, RetrievalConfig())
        assert base == shuffled

    def test_matches_python_sort_oracle_50_vectors(self):
        rng = np.random.default_rng(7)
        d = 12
        imgs = unit_rows(rng, 50, d)
        metas = unit_rows(rng, 50, d)
        # duplicated vectors plant guaranteed score ties
        imgs[17] = imgs[4]
        metas[17] = metas[4]
        kb = KnowledgeBase(
            [make_entry(f"id-{i:03d}", imgs[i], metas[i]) for i in range(50)]
        )
        for alpha in (0.0, 0.3, 0.5, 1.0):
            q = normalize(rng.standard_normal(d))
            got = rank_all(kb, q, RetrievalConfig(alpha=alpha))
            want = sort_oracle(kb, q, alpha)
            assert [r.entry_id for r in got] == [w[0] for w in want]
            for r, w in zip(got, want):
                assert abs(r.score - w[1]) <= 1e-9

    def test_metadata_alignment_raises_score_monotonically(self):
        # rotate metadata toward the query; rank of the entry must improve
        q = normalize(basis(2, 0))
        scores = []
        for t in (0.0, 0.25, 0.5, 0.75, 1.0):
            meta = np.array([t, 1.0 - t])
            kb = KnowledgeBase(
                [make_entry("probe", basis(2, 1), meta),
                 make_entry("anchor", basis(2, 1), basis(2, 1))]
            )
            out = {r.entry_id: r.score for r in rank_all(kb, q, RetrievalConfig())}
            scores.append(out["probe"])
        assert scores == sorted(scores)
        assert scores[0] < scores[-1]

    def test_query_dim_mismatch(self):
        with pytest.raises(DataError):
            rank_all(self._kb(), normalize(basis(3, 0)), RetrievalConfig())


class TestTopK:
    def test_topk_is_prefix_of_full_ranking(self):
        rng = np.random.default_rng(23)
        d = 8
        kb = KnowledgeBase(
            [
                make_entry(f"e{i:02d}", unit_rows(rng, 1, d)[0], unit_rows(rng, 1, d)[0])
                for i in range(20)
            ]
        )
        q = normalize(rng.standard_normal(d))
        full = rank_all(kb, q, RetrievalConfig(k=20))
        for k in (1, 3, 5, 20):
            top = retrieve_topk(kb, q, RetrievalConfig(k=k))
            assert top == full[:k]

    def test_k_larger_than_kb_returns_everything(self):
        kb = KnowledgeBase([make_entry("only", basis(2, 0), basis(2, 0))])
        out = retrieve_topk(kb, normalize(basis(2, 0)), RetrievalConfig(k=10))
        assert len(out) == 1


class TestScope:
    def _kb(self):
        return KnowledgeBase(
            [
                make_entry("a", basis(2, 0), basis(2, 0)),
                make_entry("b", basis(2, 0), basis(2, 1)),
                make_entry("c", basis(2, 1), basis(2, 1)),
            ]
        )

    def test_scope_restricts_candidates(self):
        out = rank_all(
            self._kb(), normalize(basis(2, 0)), RetrievalConfig(),
            scope=frozenset({"b", "c"}),
        )
        assert [r.entry_id for r in out] == ["b", "c"]
        assert [r.rank for r in out] == [1, 2]

    def test_scoped_scores_equal_unscoped_scores(self):
        q = normalize(np.array([0.6, 0.8]))
        full = {r.entry_id: r.score for r in rank_all(self._kb(), q, RetrievalConfig())}
        scoped = rank_all(self._kb(), q, RetrievalConfig(), scope=frozenset({"a", "c"}))
        for r in scoped:
            assert r.score == full[r.entry_id]

    def test_unknown_scope_id(self):
        with pytest.raises(UnknownScopeId) as exc:
            rank_all(
                self._kb(), normalize(basis(2, 0)), RetrievalConfig(),
                scope=frozenset({"a", "ghost"}), scope_owner="q77",
            )
        assert exc.value.query_id == "q77"
        assert exc.value.entry_id == "ghost"

    def test_empty_scope_returns_nothing(self):
        out = rank_all(
            self._kb(), normalize(basis(2, 0)), RetrievalConfig(), scope=frozenset()
        )
        assert out == []

    def test_scope_none_means_everything(self):
        out = rank_all(self._kb(), normalize(basis(2, 0)), RetrievalConfig(), scope=None)
        assert len(out) == 3


class TestAlphaAffinity:
    def test_alpha_extremes_pick_different_winners(self):
        # img favors "visual", meta favors "textual"; alpha decides
        kb = KnowledgeBase(
            [
                make_entry("visual", basis(2, 0), basis(2, 1)),
                make_entry("textual", basis(2, 1), basis(2, 0)),
            ]
        )
        q = normalize(basis(2, 0))
        assert rank_all(kb, q, RetrievalConfig(alpha=1.0))[0].entry_id == "visual"
        assert rank_all(kb, q, RetrievalConfig(alpha=0.0))[0].entry_id == "textual"

    def test_score_is_affine_in_alpha(self):
        rng = np.random.default_rng(5)
        d = 10
        kb = KnowledgeBase(
            [make_entry(f"e{i}", unit_rows(rng, 1, d)[0], unit_rows(rng, 1, d)[0])
             for i in range(6)]
        )
        q = normalize(rng.standard_normal(d))
        at = {
            a: {r.entry_id: r.score for r in rank_all(kb, q, RetrievalConfig(alpha=a))}
            for a in (0.0, 0.5, 1.0)
        }
        for eid in at[0.0]:
            mid = 0.5 * (at[0.0][eid] + at[1.0][eid])
            assert abs(at[0.5][eid] - mid) <= 1e-12


def test_ranks_of_filters_and_maps():
    rs = [
        RankedResult("a", 0.9, 1),
        RankedResult("b", 0.8, 2),
        RankedResult("c", 0.7, 3),
    ]
    assert ranks_of(rs, frozenset({"c", "a", "zz"})) == {"a": 1, "c": 3}
    assert ranks_of([], frozenset({"a"})) == {}
