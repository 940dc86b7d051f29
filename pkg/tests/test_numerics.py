import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from relclean.exceptions import ContractError, NumericalError
from relclean.numerics import AdamState, adam_step, dropout_mask, make_rng, spmm

from oracles import dense_product


def random_sparse(rng, n, density):
    D = rng.standard_normal((n, n)) * (rng.random((n, n)) < density)
    return sp.csr_matrix(D)


def test_spmm_identity():
    X = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(spmm(sp.identity(3, format="csr"), X), X)


def test_spmm_zero():
    X = np.random.default_rng(0).standard_normal((2, 3))
    assert np.array_equal(spmm(sp.csr_matrix((3, 3)), X), np.zeros((2, 3)))


def test_spmm_matches_dense_oracle():
    rng = np.random.default_rng(5)
    S = random_sparse(rng, 6, 0.3)
    X = rng.standard_normal((4, 6))
    assert np.max(np.abs(spmm(S, X) - dense_product(S, X))) <= 1e-12


def test_spmm_dimension_mismatch():
    with pytest.raises(ContractError):
        spmm(sp.identity(3, format="csr"), np.ones((2, 4)))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 50), l=st.integers(1, 5), seed=st.integers(0, 2**32 - 1))
def test_spmm_property(n, l, seed):
    rng = np.random.default_rng(seed)
    S = random_sparse(rng, n, 0.2)
    X = rng.standard_normal((l, n))
    out = spmm(S, X)
    assert np.max(np.abs(out - dense_product(S, X)), initial=0.0) <= 1e-12
    assert np.array_equal(out, spmm(S, X))


def test_adam_zero_gradient_leaves_params():
    p = [np.array([1.5, -2.0])]
    state = AdamState.zeros_like(p)
    out = adam_step(p, [np.zeros(2)], state, 0.1)
    assert np.array_equal(out[0], p[0])
    assert state.step == 1


def test_adam_first_step():
    # m_hat = 1, v_hat = 1 after one step with g = 1: update = lr / (1 + eps)
    state = AdamState.zeros_like([np.zeros(1)])
    out = adam_step([np.zeros(1)], [np.ones(1)], state, 0.1)
    assert out[0][0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_deterministic():
    def run():
        p = [np.array([0.3, 0.1])]
        st_ = AdamState.zeros_like(p)
        for t in range(5):
            p = adam_step(p, [np.array([np.sin(t), np.cos(t)])], st_, 0.1)
        return p[0]

    assert np.array_equal(run(), run())


def test_adam_rejects_nonfinite():
    state = AdamState.zeros_like([np.zeros(1)])
    with pytest.raises(NumericalError):
        adam_step([np.zeros(1)], [np.array([np.nan])], state, 0.1)


def test_adam_rejects_bad_lr():
    with pytest.raises(ContractError):
        adam_step([np.zeros(1)], [np.zeros(1)], AdamState.zeros_like([np.zeros(1)]), 0.0)


def test_dropout_p_zero():
    mask, scale = dropout_mask(make_rng(0), 7, 0.0)
    assert np.array_equal(mask, np.ones(7)) and scale == 1.0


def test_dropout_keep_fraction():
    # binomial(1e5, 0.5): sd of the fraction is ~0.0016, so 0.01 is > 6 sd
    mask, scale = dropout_mask(make_rng(123), 100_000, 0.5)
    assert abs(mask.mean() - 0.5) <= 0.01
    assert scale == 2.0
    assert set(np.unique(mask)) <= {0.0, 1.0}


def test_dropout_same_seed():
    a, _ = dropout_mask(make_rng(9), 50, 0.3)
    b, _ = dropout_mask(make_rng(9), 50, 0.3)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_dropout_range(p):
    with pytest.raises(ContractError):
        dropout_mask(make_rng(0), 3, p)
