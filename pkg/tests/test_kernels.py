from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mocktrial import kernels

needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba not installed")


def test_backend_flag_is_consistent():
    assert kernels.BACKEND == ("numba" if kernels.USE_NUMBA else "numpy")


@needs_numba
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 12), st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_count_extreme_paths_agree(n, rows, seed):
    rng = np.random.default_rng(seed)
    d = rng.integers(-5, 6, n).astype(np.float64)
    signs = (1 - 2 * rng.integers(0, 2, (rows, n))).astype(np.int8)
    thr = abs(d.sum()) - 1e-9
    assert kernels.count_extreme_numpy(d, signs, thr) == kernels.count_extreme_numba(d, signs, thr)


@needs_numba
@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60), st.integers(0, 2**32 - 1))
def test_bm25_paths_agree(n_docs, n_post, seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, n_docs, n_post).astype(np.int64)
    tfs = rng.integers(1, 5, n_post).astype(np.float64)
    w = rng.uniform(0, 3, n_post)
    dl = rng.integers(1, 50, n_docs).astype(np.float64)
    a = kernels.bm25_accumulate_numpy(ids, tfs, w, dl, float(dl.mean()), 1.2, 0.75)
    b = kernels.bm25_accumulate_numba(ids, tfs, w, dl, float(dl.mean()), 1.2, 0.75)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_dispatch_returns_python_int():
    d = np.array([1.0, -2.0, 3.0])
    signs = np.array([[1, 1, 1], [-1, -1, -1], [1, -1, 1]], dtype=np.int8)
    assert kernels.count_extreme(d, signs, 2.0) == 3
    assert isinstance(kernels.count_extreme(d, signs, 2.0), int)
