"""Time the numba and numpy paths of the two hot kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from mocktrial import kernels


def permutation_inputs(n: int = 200, resamples: int = 10_000, seed: int = 0):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=n)
    signs = (1 - 2 * rng.integers(0, 2, size=(resamples, n))).astype(np.int8)
    return d, signs, abs(float(d.sum()))


def bm25_inputs(n_docs: int = 5_000, n_postings: int = 200_000, seed: int = 0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, n_docs, n_postings).astype(np.int64)
    tfs = rng.integers(1, 6, n_postings).astype(np.float64)
    weights = rng.uniform(0.1, 4.0, n_postings)
    doc_len = rng.integers(20, 400, n_docs).astype(np.float64)
    return ids, tfs, weights, doc_len, float(doc_len.mean()), 1.2, 0.75


def bench(label: str, fn, repeats: int) -> float:
    fn()  # warm-up (and JIT compile for numba)
    best = min(timeit.repeat(fn, number=1, repeat=repeats))
    print(f"{label:<34}{best * 1e3:>10.2f} ms")
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    print(f"dispatch backend: {kernels.BACKEND}")

    d, signs, thr = permutation_inputs()
    t_np = bench("count_extreme numpy", lambda: kernels.count_extreme_numpy(d, signs, thr), args.repeats)
    if kernels.HAVE_NUMBA:
        t_nb = bench("count_extreme numba", lambda: kernels.count_extreme_numba(d, signs, thr), args.repeats)
        print(f"{'speedup':<34}{t_np / t_nb:>10.2f} x")

    b = bm25_inputs()
    t_np = bench("bm25_accumulate numpy", lambda: kernels.bm25_accumulate_numpy(*b), args.repeats)
    if kernels.HAVE_NUMBA:
        t_nb = bench("bm25_accumulate numba", lambda: kernels.bm25_accumulate_numba(*b), args.repeats)
        print(f"{'speedup':<34}{t_np / t_nb:>10.2f} x")
    else:
        print("numba not installed; only the numpy path was timed")


if __name__ == "__main__":
    main()
