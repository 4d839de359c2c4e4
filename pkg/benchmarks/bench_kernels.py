"""Times each jitted kernel against its pure-numpy twin.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--quick]

The numba path must be importable for a comparison; if it is not (or
MEPA_NO_NUMBA is set), only the numpy timings are printed. Timings are the
median of --repeats runs after two untimed warmup calls, so jit compilation
never lands in a measured run.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from mepa import _kernels

SHAPES = [(100, 32), (1_000, 256), (10_000, 512), (100_000, 768)]
QUICK_SHAPES = [(100, 32), (1_000, 256)]


def median_ms(fn, args, repeats: int) -> float:
    fn(*args)
    fn(*args)
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        samples.append((time.perf_counter() - start) * 1e3)
    return statistics.median(samples)


def kernel_args(name: str, n: int, d: int, rng: np.random.Generator):
    matrix = _kernels.as_kernel_matrix(rng.standard_normal((n, d)))
    other = _kernels.as_kernel_matrix(rng.standard_normal((n, d)))
    vec = _kernels.as_kernel_vector(rng.standard_normal(d))
    per_row = _kernels.as_kernel_vector(rng.standard_normal(n))
    if name == "hybrid_scores":
        return (vec, matrix, other, 0.5)
    if name == "matvec":
        return (matrix, vec)
    if name == "row_dots":
        return (matrix, other)
    if name == "scalarized_scores":
        return (per_row, _kernels.as_kernel_vector(rng.standard_normal(n)), 0.5)
    if name == "argmax_at":
        idx = np.sort(rng.choice(n, size=max(1, n // 2), replace=False)).astype(
            np.int64
        )
        return (per_row, idx)
    raise ValueError(name)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=9)
    parser.add_argument(
        "--quick", action="store_true", help="small shapes only, for smoke runs"
    )
    args = parser.parse_args()

    shapes = QUICK_SHAPES if args.quick else SHAPES
    rng = np.random.default_rng(0)
    have_numba = _kernels.NUMBA_IMPLS is not None
    if not have_numba:
        print("numba path unavailable (MEPA_NO_NUMBA set or import failed);")
        print("timing the numpy implementations only\n")

    header = f"{'kernel':<18} {'n':>7} {'d':>4} {'numpy ms':>10}"
    if have_numba:
        header += f" {'numba ms':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name in sorted(_kernels.NUMPY_IMPLS):
        for n, d in shapes:
            call_args = kernel_args(name, n, d, rng)
            np_ms = median_ms(_kernels.NUMPY_IMPLS[name], call_args, args.repeats)
            line = f"{name:<18} {n:>7} {d:>4} {np_ms:>10.3f}"
            if have_numba:
                nb_ms = median_ms(
                    _kernels.NUMBA_IMPLS[name], call_args, args.repeats
                )
                ratio = np_ms / nb_ms if nb_ms > 0 else float("inf")
                line += f" {nb_ms:>10.3f} {ratio:>7.1f}x"
            print(line)


if __name__ == "__main__":
    main()
