import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from afford.corpus import LabeledMatrix, VocabIndex
from afford.ppmi_transform import ppmi, ppmi_diagnostics


def labeled(A):
    A = np.asarray(A)
    return LabeledMatrix(
        sp.csr_matrix(A),
        VocabIndex([f"n{i}" for i in range(A.shape[0])]),
        VocabIndex([f"v{k}" for k in range(A.shape[1])]),
    )


def dense_ppmi(M):
    """Cell-by-cell evaluation of the PPMI definition."""
    M = np.asarray(M, dtype=float)
    T = M.sum()
    out = np.zeros_like(M)
    for i in range(M.shape[0]):
        for k in range(M.shape[1]):
            if M[i, k] == 0:
                continue
            pj = M[i, k] / T
            pi = M[i, :].sum() / T
            pk = M[:, k].sum() / T
            out[i, k] = max(math.log(pj / (pi * pk)), 0.0)
    return out


def test_diagonal():
    P = ppmi(labeled([[2, 0], [0, 2]])).toarray()
    np.testing.assert_allclose(P, [[math.log(2), 0], [0, math.log(2)]], atol=1e-15)
    assert P[0, 0] == pytest.approx(0.6931, abs=1e-4)


def test_independence_gives_zero():
    P = ppmi(labeled(np.ones((3, 3))))
    assert P.matrix.nnz == 0


def test_mixed_hand_values():
    P = ppmi(labeled([[1, 1], [0, 2]])).toarray()
    np.testing.assert_allclose(P, [[math.log(2), 0.0], [0.0, math.log(4 / 3)]], atol=1e-15)
    np.testing.assert_allclose(P, dense_ppmi([[1, 1], [0, 2]]), atol=1e-15)


def test_all_zero():
    with pytest.raises(ValueError, match="no observations"):
        ppmi(labeled(np.zeros((2, 3), dtype=int)))


def test_stored_values_positive_and_unobserved_rows_kept():
    M = labeled([[3, 0, 1], [0, 0, 0], [1, 2, 0]])
    P = ppmi(M)
    assert P.shape == (3, 3)
    assert np.all(P.matrix.data > 0)
    assert 1 in P.zero_rows()
    d = ppmi_diagnostics(M, P)
    assert d["unobserved_nouns"] == ["n1"]
    assert d["total_count"] == 7


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 40), st.integers(0, 2**31))
def test_matches_dense_oracle(m, n, seed):
    M = np.random.default_rng(seed).integers(0, 10, (m, n))
    if M.sum() == 0:
        M[0, 0] = 1
    np.testing.assert_allclose(ppmi(labeled(M)).toarray(), dense_ppmi(M), rtol=0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 50))
def test_scale_invariance(seed, c):
    M = np.random.default_rng(seed).integers(0, 5, (8, 9))
    M[0, 0] += 1
    np.testing.assert_allclose(ppmi(labeled(M)).toarray(), ppmi(labeled(M * c)).toarray(), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_zero_preservation(seed):
    M = np.random.default_rng(seed).integers(0, 3, (10, 12))
    M[0, 0] += 1
    P = ppmi(labeled(M)).toarray()
    assert np.all(P[M == 0] == 0)
