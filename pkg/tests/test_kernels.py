import os
import subprocess
import sys

import numpy as np
import pytest

from mepa import _kernels
from mepa._kernels import NUMPY_IMPLS, as_kernel_matrix, as_kernel_vector, warmup

rng = np.random.default_rng(20240817)


def random_inputs(n=64, d=12):
    img = rng.standard_normal((n, d))
    meta = rng.standard_normal((n, d))
    q = rng.standard_normal(d)
    return as_kernel_matrix(img), as_kernel_matrix(meta), as_kernel_vector(q)


@pytest.mark.skipif(not _kernels.USING_NUMBA, reason="numba path disabled")
class TestJitMatchesNumpy:
    """The jitted kernels and their numpy twins must agree closely; the
    active alias must point at one of them."""

    def test_hybrid_scores_parity(self):
        img, meta, q = random_inputs()
        for alpha in (0.0, 0.25, 0.5, 1.0):
            a = _kernels.NUMBA_IMPLS["hybrid_scores"](q, img, meta, alpha)
            b = NUMPY_IMPLS["hybrid_scores"](q, img, meta, alpha)
            assert np.max(np.abs(a - b)) <= 1e-12

    def test_matvec_parity(self):
        img, _, q = random_inputs()
        a = _kernels.NUMBA_IMPLS["matvec"](img, q)
        b = NUMPY_IMPLS["matvec"](img, q)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_row_dots_parity(self):
        img, meta, _ = random_inputs()
        a = _kernels.NUMBA_IMPLS["row_dots"](img, meta)
        b = NUMPY_IMPLS["row_dots"](img, meta)
        assert np.max(np.abs(a - b)) <= 1e-12

    def test_scalarized_parity(self):
        rel = as_kernel_vector(rng.standard_normal(40))
        coh = as_kernel_vector(rng.standard_normal(40))
        for lam in (0.0, 0.5, 1e6):
            a = _kernels.NUMBA_IMPLS["scalarized_scores"](rel, coh, lam)
            b = NUMPY_IMPLS["scalarized_scores"](rel, coh, lam)
            assert np.max(np.abs(a - b)) <= 1e-6 * max(1.0, lam)

    def test_argmax_at_parity(self):
        values = as_kernel_vector(rng.standard_normal(30))
        for _ in range(50):
            size = int(rng.integers(0, 30))
            idx = rng.choice(30, size=size, replace=False).astype(np.int64)
            idx.sort()
            a = _kernels.NUMBA_IMPLS["argmax_at"](values, idx)
            b = NUMPY_IMPLS["argmax_at"](values, idx)
            assert a == b


class TestDuplicateRowStability:
    """Rows with identical bits must score identically regardless of where
    they sit in the matrix, or downstream id tie-breaks become
    implementation-dependent."""

    def impls(self):
        yield NUMPY_IMPLS
        if _kernels.USING_NUMBA:
            yield _kernels.NUMBA_IMPLS

    def test_matvec_bitwise_equal_on_duplicate_rows(self):
        img, _, q = random_inputs(n=97, d=12)
        img[0] = img[41]
        img[96] = img[41]
        for impl in self.impls():
            out = impl["matvec"](img, q)
            assert out[0] == out[41] == out[96]

    def test_hybrid_scores_bitwise_equal_on_duplicate_rows(self):
        img, meta, q = random_inputs(n=97, d=12)
        for row in (0, 96):
            img[row] = img[41]
            meta[row] = meta[41]
        for impl in self.impls():
            for alpha in (0.0, 0.3, 1.0):
                out = impl["hybrid_scores"](q, img, meta, alpha)
                assert out[0] == out[41] == out[96]


class TestArgmaxAt:
    def test_empty_indices(self):
        assert _kernels.argmax_at(as_kernel_vector([1.0]), np.empty(0, np.int64)) == -1

    def test_first_max_wins_ties(self):
        values = as_kernel_vector([1.0, 3.0, 3.0, 2.0])
        idx = np.array([1, 2], dtype=np.int64)
        assert _kernels.argmax_at(values, idx) == 1

    def test_subset_only(self):
        values = as_kernel_vector([9.0, 1.0, 5.0])
        idx = np.array([1, 2], dtype=np.int64)
        assert _kernels.argmax_at(values, idx) == 2


class TestCoercion:
    def test_matrix_layout(self):
        m = as_kernel_matrix(np.asfortranarray(np.ones((3, 2), dtype=np.float32)))
        assert m.dtype == np.float64 and m.flags["C_CONTIGUOUS"]

    def test_vector_layout(self):
        v = as_kernel_vector([1, 2, 3])
        assert v.dtype == np.float64

    def test_warmup_runs(self):
        warmup()


_PROBE = (
    "import os, json\n"
    "from mepa import _kernels\n"
    "import numpy as np\n"
    "s = _kernels.hybrid_scores(np.ones(2), np.eye(2), np.eye(2), 0.5)\n"
    "print(json.dumps({'using_numba': _kernels.USING_NUMBA, 'score0': s[0]}))\n"
)


def _probe_with_env(value: str | None) -> dict:
    import json

    env = dict(os.environ)
    env.pop("MEPA_NO_NUMBA", None)
    if value is not None:
        env["MEPA_NO_NUMBA"] = value
    out = subprocess.run(
        [sys.executable, "-c", _PROBE], env=env, capture_output=True, text=True
    )
    assert out.returncode == 0, out.stderr
    return json.loads(out.stdout.strip().splitlines()[-1])


class TestEnvSelection:
    def test_flag_disables_jit_path(self):
        info = _probe_with_env("1")
        assert info["using_numba"] is False
        assert info["score0"] == 1.0

    def test_unset_flag_enables_jit_path(self):
        info = _probe_with_env(None)
        assert info["using_numba"] is True
        assert info["score0"] == 1.0

    def test_false_like_values_keep_jit(self):
        assert _probe_with_env("0")["using_numba"] is True
        assert _probe_with_env("")["using_numba"] is True
