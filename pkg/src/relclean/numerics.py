"""Low-level kernels: sparse products, Adam, dropout and seeded randomness.

Dense matrices are plain ``numpy.ndarray`` (float64) and sparse matrices are
``scipy.sparse.csr_matrix`` with sorted indices and no stored zeros.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError, NumericalError

__all__ = [
    "make_rng",
    "derive_seed",
    "as_csr",
    "spmm",
    "check_finite",
    "AdamState",
    "adam_step",
    "dropout_mask",
    "sigmoid",
]


def make_rng(seed, *stream):
    """Return a ``numpy.random.Generator`` keyed on ``seed`` and optional stream ids.

    Identical ``(seed, *stream)`` tuples always give identical streams, so
    independent jobs (one per class, one per episode) can be derived from a
    single user seed without sharing generator state.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(s) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def derive_seed(*keys):
    """Deterministic 63-bit integer seed derived from a tuple of integers."""
    ss = np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def as_csr(S, shape=None):
    """Canonical CSR copy: float64, sorted column indices, explicit zeros removed."""
    S = sp.csr_matrix(S, shape=shape, dtype=np.float64, copy=True)
    S.eliminate_zeros()
    S.sort_indices()
    return S


def check_finite(x, what="array"):
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


def spmm(S, X):
    """Right-multiply a dense ``l x N`` matrix by a sparse ``N x N`` matrix.

    Computes ``X @ S``: output column ``i`` is ``sum_j X[:, j] * S[j, i]``,
    accumulated in ascending ``j``.

    Parameters
    ----------
    S : scipy.sparse matrix, shape (N, N)
    X : ndarray, shape (l, N)

    Returns
    -------
    ndarray, shape (l, N)
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"spmm expects a 2-D dense operand, got ndim={X.ndim}")
    if S.shape[0] != X.shape[1] or S.shape[1] != X.shape[1]:
        raise ContractError(
            f"spmm dimension mismatch: S is {S.shape[0]}x{S.shape[1]}, X is {X.shape[0]}x{X.shape[1]}"
        )
    # S^T in CSR has one row per output column with sorted source indices j.
    St = sp.csr_matrix(S.T, dtype=np.float64)
    St.sort_indices()
    return np.ascontiguousarray((St @ X.T).T)


def sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


@dataclass
class AdamState:
    """Moment accumulators for :func:`adam_step`, one entry per parameter array."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p, dtype=np.float64) for p in params],
            v=[np.zeros_like(p, dtype=np.float64) for p in params],
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update.

    Returns a new list of parameter arrays; ``state`` is updated in place.
    """
    if lr <= 0:
        raise ContractError(f"learning rate must be positive, got {lr}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ContractError("params, grads and Adam moments differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(state.m[i]):
            raise ContractError(f"shape mismatch for parameter {i}: {np.shape(p)} vs {np.shape(g)}")
        check_finite(g, f"gradient {i}")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


def dropout_mask(rng, length, p):
    """Inverted-dropout mask.

    Returns
    -------
    mask : ndarray of float64, shape (length,)
        Entries are 0 (dropped) or 1 (kept).
    scale : float
        ``1 / (1 - p)``, to be applied to surviving entries at train time.
    """
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must lie in [0, 1), got {p}")
    scale = 1.0 / (1.0 - p)
    if p == 0.0:
        return np.ones(length), scale
    keep = rng.random(length) >= p
    return keep.astype(np.float64), scale
