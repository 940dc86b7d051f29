import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from relclean.exceptions import ContractError
from relclean.graph import (
    build_affinity,
    normalize_row_stochastic,
    normalize_symmetric,
    write_edge_csv,
)

from oracles import reciprocal_knn, row_stochastic, symmetric


def unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def test_duplicates_and_orthogonal():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    A = build_affinity(X, 1).A.toarray()
    expected = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    assert np.array_equal(A, expected)


def test_opposite_vectors_clip_to_no_edge():
    g = build_affinity(np.array([[1.0, 0.0], [-1.0, 0.0]]), 1)
    assert g.A.nnz == 0


def test_matches_bruteforce_oracle():
    X = unit_rows(np.random.default_rng(0), 20, 6)
    A = build_affinity(X, 5).A.toarray()
    ref = reciprocal_knn(X, 5)
    assert np.array_equal(A > 0, ref > 0)
    assert np.max(np.abs(A - ref)) <= 1e-12


def test_zero_vector_names_id():
    X = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ContractError, match="bad-one"):
        build_affinity(X, 1, ids=["ok", "bad-one"])


def test_k_larger_than_class():
    X = unit_rows(np.random.default_rng(1), 4, 3)
    g = build_affinity(X, 50)
    # every pair is mutual when k_eff = N - 1; only negative cosines drop out
    ref = reciprocal_knn(X, 3)
    assert np.max(np.abs(g.A.toarray() - ref)) <= 1e-12


def test_single_example():
    g = build_affinity(np.array([[0.3, 0.4]]), 5)
    assert g.n == 1 and g.A.nnz == 0


def test_row_stochastic_examples():
    assert np.array_equal(normalize_row_stochastic(sp.csr_matrix((3, 3))).toarray(), np.eye(3))
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(normalize_row_stochastic(A).toarray(), 0.5, atol=0)


def test_row_stochastic_random():
    rng = np.random.default_rng(2)
    g = build_affinity(unit_rows(rng, 30, 4), 6)
    At = normalize_row_stochastic(g).toarray()
    assert np.max(np.abs(At.sum(axis=1) - 1.0)) <= 1e-12
    assert np.max(np.abs(At - row_stochastic(g.A.toarray()))) <= 1e-12
    assert np.all(np.diag(At) > 0)


def test_symmetric_examples():
    A = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.array_equal(normalize_symmetric(A).toarray(), A.toarray())
    B = sp.csr_matrix(np.array([[0.0, 0.5, 0.0], [0.5, 0.0, 0.0], [0.0, 0.0, 0.0]]))
    S = normalize_symmetric(B).toarray()
    assert np.all(S[2] == 0) and np.all(S[:, 2] == 0)


def test_symmetric_random_and_spectral_radius():
    rng = np.random.default_rng(3)
    g = build_affinity(unit_rows(rng, 30, 4), 6)
    S = normalize_symmetric(g)
    assert np.max(np.abs(S.toarray() - symmetric(g.A.toarray()))) <= 1e-12
    assert np.array_equal(S.toarray(), S.toarray().T)
    # power iteration on S^2 (nonnegative, so the top eigenvalue is the spectral radius squared)
    v = np.ones(30)
    for _ in range(500):
        w = S @ (S @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            break
        v = w / nrm
    assert np.sqrt(v @ (S @ (S @ v))) <= 1.0 + 1e-9


def test_edge_csv(tmp_path):
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    g = build_affinity(X, 1)
    p = tmp_path / "e.csv"
    write_edge_csv(p, g, ["a", "b", "c"])
    assert p.read_text() == "src_id,dst_id,weight\na,b,1.000000\n"


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 25), k=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_graph_invariants(n, k, seed):
    rng = np.random.default_rng(seed)
    X = unit_rows(rng, n, 5)
    g = build_affinity(X, k)
    A = g.A.toarray()
    assert np.array_equal(A, A.T)
    assert np.all(np.diag(A) == 0) and np.all(A >= 0)
    # more neighbours never remove an edge
    bigger = build_affinity(X, k + 1).A.toarray()
    assert np.all(bigger[A > 0] > 0)
    # permutation equivariance
    perm = rng.permutation(n)
    Ap = build_affinity(X[perm], k).A.toarray()
    inv = np.argsort(perm)
    assert np.max(np.abs(Ap[np.ix_(inv, inv)] - A)) <= 1e-12
    At = normalize_row_stochastic(g).toarray()
    assert np.max(np.abs(At.sum(axis=1) - 1)) <= 1e-12
