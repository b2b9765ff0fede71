"""Numeric inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``MOCKTRIAL_DISABLE_NUMBA`` is
unset (or ``0``). Both paths are always importable as ``*_numpy`` and
``*_numba`` so tests and ``benchmarks/bench_kernels.py`` can compare them.
"""

from __future__ import annotations

import logging
import os

import numpy as np

log = logging.getLogger(__name__)

_DISABLED = os.environ.get("MOCKTRIAL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba

    logging.getLogger("numba").setLevel(logging.WARNING)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


def _njit(func):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)


# -- paired sign-flip permutation ------------------------------------------------


def count_extreme_numpy(diffs: np.ndarray, signs: np.ndarray, threshold: float) -> int:
    """Rows of ``signs`` whose signed sum of ``diffs`` reaches ``threshold`` in magnitude."""
    sums = signs.astype(np.float64) @ diffs
    return int(np.count_nonzero(np.abs(sums) >= threshold))


def _count_extreme_loop(diffs, signs, threshold):
    n_rows, n = signs.shape
    count = 0
    for r in range(n_rows):
        acc = 0.0
        for i in range(n):
            acc += signs[r, i] * diffs[i]
        if abs(acc) >= threshold:
            count += 1
    return count


count_extreme_numba = _njit(_count_extreme_loop)


def count_extreme(diffs: np.ndarray, signs: np.ndarray, threshold: float) -> int:
    diffs = np.ascontiguousarray(diffs, dtype=np.float64)
    signs = np.ascontiguousarray(signs, dtype=np.int8)
    if USE_NUMBA:
        return int(count_extreme_numba(diffs, signs, float(threshold)))
    return count_extreme_numpy(diffs, signs, float(threshold))


# -- BM25 accumulation -----------------------------------------------------------


def bm25_accumulate_numpy(
    doc_ids: np.ndarray,
    tfs: np.ndarray,
    weights: np.ndarray,
    doc_len: np.ndarray,
    avgdl: float,
    k1: float,
    b: float,
) -> np.ndarray:
    """Sum per-posting BM25 contributions into a score per document.

    ``doc_ids``/``tfs``/``weights`` are parallel posting arrays; ``weights``
    carries the idf of the posting's term.
    """
    scores = np.zeros(doc_len.shape[0], dtype=np.float64)
    if doc_ids.size == 0:
        return scores
    norm = k1 * (1.0 - b + b * doc_len[doc_ids] / avgdl)
    contrib = weights * (tfs * (k1 + 1.0)) / (tfs + norm)
    np.add.at(scores, doc_ids, contrib)
    return scores


def _bm25_loop(doc_ids, tfs, weights, doc_len, avgdl, k1, b):
    scores = np.zeros(doc_len.shape[0], dtype=np.float64)
    for j in range(doc_ids.shape[0]):
        d = doc_ids[j]
        tf = tfs[j]
        norm = k1 * (1.0 - b + b * doc_len[d] / avgdl)
        scores[d] += weights[j] * (tf * (k1 + 1.0)) / (tf + norm)
    return scores


bm25_accumulate_numba = _njit(_bm25_loop)


def bm25_accumulate(doc_ids, tfs, weights, doc_len, avgdl: float, k1: float, b: float) -> np.ndarray:
    doc_ids = np.ascontiguousarray(doc_ids, dtype=np.int64)
    tfs = np.ascontiguousarray(tfs, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    doc_len = np.ascontiguousarray(doc_len, dtype=np.float64)
    if USE_NUMBA:
        return bm25_accumulate_numba(doc_ids, tfs, weights, doc_len, float(avgdl), float(k1), float(b))
    return bm25_accumulate_numpy(doc_ids, tfs, weights, doc_len, float(avgdl), float(k1), float(b))
