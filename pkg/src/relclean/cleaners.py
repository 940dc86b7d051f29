"""Per-class relevance estimation for noisy examples.

Every cleaner sees one class at a time: a feature matrix for the class'
extended set (clean + noisy examples) and an indication of which rows are
clean. It returns one relevance value in ``[0, 1]`` per row, with clean rows
pinned to exactly 1.

The functional layer (``train_gcn``, ``label_propagation``, ...) follows the
convention that the first ``k`` rows are the clean ones. The estimator classes
(``GCNCleaner``, ...) accept any row order together with a boolean clean
indicator, in the usual ``fit(X, y)`` form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_X_y

from .exceptions import ContractError, NumericalError
from .graph import build_affinity, l2_normalize, normalize_row_stochastic, normalize_symmetric
from .numerics import AdamState, adam_step, dropout_mask, make_rng, sigmoid, spmm

__all__ = [
    "RelevanceMap",
    "GcnParams",
    "GcnTrainConfig",
    "LpConfig",
    "init_gcn_params",
    "gcn_forward",
    "gcn_loss",
    "gcn_grad",
    "train_gcn",
    "train_mlp",
    "lp_solve",
    "label_propagation",
    "similarity_relevance",
    "beta_relevance",
    "draw_negatives",
    "linear_relevance",
    "GCNCleaner",
    "MLPCleaner",
    "LabelPropagationCleaner",
    "SimilarityCleaner",
    "BetaCleaner",
    "LinearCleaner",
    "CLEANERS",
    "make_cleaner",
]

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class RelevanceMap:
    """Relevance of each member of one class' extended set."""

    class_id: str
    ids: tuple
    relevance: np.ndarray
    provenance: tuple

    def __post_init__(self):
        rel = np.asarray(self.relevance, dtype=np.float64)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "relevance", rel)
        if not (len(self.ids) == len(self.provenance) == rel.shape[0]):
            raise ContractError("ids, provenance and relevance differ in length")
        if np.any(~np.isfinite(rel)) or np.any(rel < 0.0) or np.any(rel > 1.0):
            raise ContractError(f"relevance for class {self.class_id!r} outside [0, 1]")
        for i, p in enumerate(self.provenance):
            if p not in ("clean", "noisy"):
                raise ContractError(f"unknown provenance {p!r}")
            if p == "clean" and rel[i] != 1.0:
                raise ContractError(f"clean example {self.ids[i]!r} must have relevance 1")

    @property
    def noisy_mask(self):
        return np.array([p == "noisy" for p in self.provenance], dtype=bool)

    @classmethod
    def from_clean_first(cls, class_id, ids, relevance, k):
        prov = ["clean"] * k + ["noisy"] * (len(ids) - k)
        return cls(class_id, ids, relevance, prov)


@dataclass
class GcnParams:
    theta1: np.ndarray  # d x m
    theta2: np.ndarray  # m x 1

    def __post_init__(self):
        if self.theta1.ndim != 2 or self.theta2.ndim != 2 or self.theta2.shape[1] != 1:
            raise ContractError("theta1 must be d x m and theta2 m x 1")
        if self.theta1.shape[1] != self.theta2.shape[0] or self.theta1.shape[1] < 1:
            raise ContractError(
                f"hidden sizes disagree: theta1 {self.theta1.shape}, theta2 {self.theta2.shape}"
            )

    def as_list(self):
        return [self.theta1, self.theta2]


@dataclass
class GcnTrainConfig:
    """GCN/MLP cleaner hyperparameters (defaults: Adam lr 0.1, 100 iterations,
    dropout 0.5 on the hidden layer, 16 hidden units)."""

    lambda_: float = 1.0
    iterations: int = 100
    lr: float = 0.1
    dropout: float = 0.5
    hidden: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ContractError(f"lambda must be non-negative, got {self.lambda_}")
        if self.iterations < 0 or self.hidden < 1 or self.lr <= 0:
            raise ContractError("iterations >= 0, hidden >= 1 and lr > 0 are required")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class LpConfig:
    alpha: float = 0.9
    tol: float = 1e-10
    max_iter: int = 1000

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ContractError(f"alpha must lie in (0, 1), got {self.alpha}")


# --------------------------------------------------------------------------- GCN


def init_gcn_params(rng, d, m):
    """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``."""
    b1 = 1.0 / np.sqrt(d)
    b2 = 1.0 / np.sqrt(m)
    theta1 = rng.uniform(-b1, b1, size=(d, m))
    theta2 = rng.uniform(-b2, b2, size=(m, 1))
    return GcnParams(theta1, theta2)


def _check_gcn_shapes(params, A_norm, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ContractError(f"features must be 2-D (N x d), got shape {X.shape}")
    n, d = X.shape
    if A_norm.shape != (n, n):
        raise ContractError(f"propagation matrix is {A_norm.shape}, expected {(n, n)}")
    if params.theta1.shape[0] != d:
        raise ContractError(f"theta1 has {params.theta1.shape[0]} rows, features have d={d}")
    return X


def _propagated_input(A_norm, X):
    # V A~ with V = X^T (d x N); independent of the parameters
    return spmm(A_norm, X.T)


def _forward(params, A_norm, VA, mask):
    U = params.theta1.T @ VA  # m x N
    H = np.maximum(U, 0.0)
    Hd = H if mask is None else H * mask
    a = spmm(A_norm, params.theta2.T @ Hd)[0]  # N
    return sigmoid(a), (U, Hd)


def gcn_forward(params, A_norm, X, mask=None):
    """Two-layer GCN scores ``sigmoid(theta2^T [theta1^T V A~]_+ A~)``.

    Parameters
    ----------
    params : GcnParams
    A_norm : sparse matrix, shape (N, N)
        Row-stochastic propagation matrix; the identity gives an MLP.
    X : ndarray, shape (N, d)
        Features, one example per row (``V = X^T``).
    mask : ndarray, shape (m, N), optional
        Multiplier for the hidden activations (dropout mask times its
        ``1/(1-p)`` scale). ``None`` means inference mode.

    Returns
    -------
    ndarray, shape (N,)
    """
    X = _check_gcn_shapes(params, A_norm, X)
    if mask is not None and mask.shape != (params.theta1.shape[1], X.shape[0]):
        raise ContractError(f"dropout mask shape {mask.shape} does not match hidden layer")
    F, _ = _forward(params, A_norm, _propagated_input(A_norm, X), mask)
    return F


def gcn_loss(outputs, k, lambda_):
    """Weighted binary cross-entropy; the first ``k`` outputs are the clean examples."""
    F = np.asarray(outputs, dtype=np.float64)
    n = F.shape[0]
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= k <= N, got k={k}, N={n}")
    Fc = np.clip(F, LOG_CLAMP, 1.0 - LOG_CLAMP)
    loss = -np.sum(np.log(Fc[:k])) / k
    if n > k:
        loss -= lambda_ * np.sum(np.log1p(-Fc[k:])) / (n - k)
    if not np.isfinite(loss):
        raise NumericalError("non-finite GCN loss")
    return float(loss)


def _output_grad(F, k, lambda_):
    n = F.shape[0]
    g = np.empty(n)
    g[:k] = -(1.0 - F[:k]) / k
    if n > k:
        g[k:] = lambda_ * F[k:] / (n - k)
    # where the log clamp is active the loss is flat in the output
    g[(F < LOG_CLAMP) | (F > 1.0 - LOG_CLAMP)] = 0.0
    return g


def _backward(params, A_norm, A_T, VA, mask, F, cache, k, lambda_):
    U, Hd = cache
    g_out = _output_grad(F, k, lambda_)[None, :]
    gZ2 = spmm(A_T, g_out)  # gradient w.r.t. theta2^T Hd, 1 x N
    d_theta2 = Hd @ gZ2.T
    gH = params.theta2 @ gZ2
    if mask is not None:
        gH = gH * mask
    gU = gH * (U > 0.0)
    d_theta1 = VA @ gU.T
    return GcnParams(d_theta1, d_theta2)


def gcn_grad(params, A_norm, X, k, lambda_, mask=None):
    """Analytic gradient of ``gcn_loss(gcn_forward(...))`` w.r.t. both weight matrices."""
    X = _check_gcn_shapes(params, A_norm, X)
    VA = _propagated_input(A_norm, X)
    F, cache = _forward(params, A_norm, VA, mask)
    return _backward(params, A_norm, sp.csr_matrix(A_norm.T), VA, mask, F, cache, k, lambda_)


def train_gcn(X, A_norm, k, cfg=None):
    """Full-batch Adam training of the GCN cleaner for one class.

    Rows ``0..k-1`` of ``X`` are clean. Returns the trained parameters and the
    relevance vector (inference-mode scores, clean rows set to 1).
    """
    cfg = cfg or GcnTrainConfig()
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if not 1 <= k <= n:
        raise ContractError(f"need 1 <= k <= N, got k={k}, N={n}")
    rng = make_rng(cfg.seed)
    params = init_gcn_params(rng, d, cfg.hidden)
    _check_gcn_shapes(params, A_norm, X)
    A_T = sp.csr_matrix(A_norm.T)
    VA = _propagated_input(A_norm, X)
    state = AdamState.zeros_like(params.as_list())
    m = cfg.hidden
    for it in range(cfg.iterations):
        keep, scale = dropout_mask(rng, m * n, cfg.dropout)
        mask = keep.reshape(m, n) * scale
        F, cache = _forward(params, A_norm, VA, mask)
        try:
            gcn_loss(F, k, cfg.lambda_)
            grads = _backward(params, A_norm, A_T, VA, mask, F, cache, k, cfg.lambda_)
            t1, t2 = adam_step(params.as_list(), grads.as_list(), state, cfg.lr)
        except NumericalError as exc:
            raise NumericalError(f"GCN training failed at iteration {it}: {exc}") from exc
        params = GcnParams(t1, t2)
    F, _ = _forward(params, A_norm, VA, None)
    relevance = np.clip(F, 0.0, 1.0)
    relevance[:k] = 1.0
    return params, relevance


def train_mlp(X, k, cfg=None):
    """GCN cleaner with identity propagation, i.e. every example on its own."""
    n = np.asarray(X).shape[0]
    return train_gcn(X, sp.identity(n, format="csr", dtype=np.float64), k, cfg)


# ------------------------------------------------------------ label propagation


def lp_solve(S, y, alpha=0.9, tol=1e-10, max_iter=1000):
    """Conjugate-gradient solve of ``(I - alpha S) r = y`` for symmetric ``S``."""
    y = np.asarray(y, dtype=np.float64)
    x = np.zeros_like(y)
    r = y.copy()
    p = r.copy()
    rs = r @ r
    if np.sqrt(rs) <= tol:
        return x
    for _ in range(max_iter):
        Ap = p - alpha * (S @ p)
        step = rs / (p @ Ap)
        x += step * p
        r -= step * Ap
        rs_new = r @ r
        if np.sqrt(rs_new) <= tol:
            return x
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise NumericalError(
        f"label propagation did not reach residual {tol:g} within {max_iter} iterations"
    )


def label_propagation(graph, clean_idx, cfg=None):
    """Relevance from label propagation seeded at the clean examples.

    Returns
    -------
    relevance : ndarray, shape (N,)
        Raw solution divided by its maximum, clean entries set to 1.
    raw : ndarray, shape (N,)
        The unscaled solution of the linear system.
    """
    cfg = cfg or LpConfig()
    clean_idx = np.asarray(clean_idx, dtype=np.intp)
    if clean_idx.size == 0:
        raise ContractError("label propagation needs at least one clean example")
    S = normalize_symmetric(graph)
    y = np.zeros(S.shape[0])
    y[clean_idx] = 1.0
    raw = lp_solve(S, y, cfg.alpha, cfg.tol, cfg.max_iter)
    rel = np.clip(raw / raw.max(), 0.0, 1.0)
    rel[clean_idx] = 1.0
    return rel, raw


# -------------------------------------------------------------------- baselines


def similarity_relevance(X, clean_idx, ids=None):
    """``(1 + cos(v_i, x)) / 2`` with ``x`` the normalized mean of normalized clean features."""
    clean_idx = np.asarray(clean_idx, dtype=np.intp)
    if clean_idx.size == 0:
        raise ContractError("similarity relevance needs at least one clean example")
    Xn = l2_normalize(X, ids)
    proto = Xn[clean_idx].mean(axis=0)
    norm = np.linalg.norm(proto)
    if norm < 1e-12:
        raise ContractError("clean features cancel out: prototype has zero norm")
    rel = np.clip((1.0 + Xn @ (proto / norm)) / 2.0, 0.0, 1.0)
    rel[clean_idx] = 1.0
    return rel


def beta_relevance(n, clean_idx, beta=1.0):
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    rel = np.full(n, float(beta))
    rel[np.asarray(clean_idx, dtype=np.intp)] = 1.0
    return rel


def draw_negatives(pool, k, seed, n_min=100, per_clean=10):
    """Sample ``max(n_min, per_clean * k)`` rows of ``pool`` without replacement
    (or all of them if the pool is smaller), keeping pool order."""
    pool = np.asarray(pool, dtype=np.float64)
    if pool.shape[0] == 0:
        raise ContractError("no negatives available from other classes")
    count = min(pool.shape[0], max(n_min, per_clean * k))
    idx = np.sort(make_rng(seed).choice(pool.shape[0], size=count, replace=False))
    return pool[idx]


def _fit_logistic(Z, t, sample_weight, l2, lr, tol, max_iter):
    w = np.zeros(Z.shape[1])
    b = 0.0
    for _ in range(max_iter):
        p = sigmoid(Z @ w + b)
        err = sample_weight * (p - t)
        gw = Z.T @ err + l2 * w
        gb = err.sum()
        if not (np.all(np.isfinite(gw)) and np.isfinite(gb)):
            raise NumericalError("non-finite gradient in linear baseline")
        if np.sqrt(gw @ gw + gb * gb) <= tol:
            return w, b
        w = w - lr * gw
        b = b - lr * gb
    raise NumericalError(f"linear baseline did not converge within {max_iter} iterations")


def linear_relevance(X, clean_idx, negatives, l2=1e-2, lr=2.0, tol=1e-6, max_iter=20000):
    """Logistic-regression relevance: clean rows vs. negatives from other classes.

    Features are L2-normalized; positives and negatives carry equal total
    weight; training is full-batch gradient descent from ``w = 0, b = 0``.
    """
    clean_idx = np.asarray(clean_idx, dtype=np.intp)
    negatives = np.asarray(negatives, dtype=np.float64)
    if clean_idx.size == 0 or negatives.ndim != 2 or negatives.shape[0] == 0:
        raise ContractError("linear baseline needs at least one positive and one negative")
    Xn = l2_normalize(X)
    Nn = l2_normalize(negatives)
    pos = Xn[clean_idx]
    Z = np.vstack([pos, Nn])
    t = np.concatenate([np.ones(len(pos)), np.zeros(len(Nn))])
    sw = np.concatenate([np.full(len(pos), 0.5 / len(pos)), np.full(len(Nn), 0.5 / len(Nn))])
    w, b = _fit_logistic(Z, t, sw, l2, lr, tol, max_iter)
    rel = sigmoid(Xn @ w + b)
    rel[clean_idx] = 1.0
    return rel


# ------------------------------------------------------------------- estimators


def _clean_first(y):
    y = np.asarray(y).astype(bool)
    clean = np.flatnonzero(y)
    noisy = np.flatnonzero(~y)
    if clean.size == 0:
        raise ContractError("at least one clean example is required")
    return np.concatenate([clean, noisy]), clean.size


class BaseCleaner(BaseEstimator):
    """Common ``fit`` plumbing.

    ``y`` is a boolean indicator: true for clean rows, false for noisy rows.
    After fitting, ``relevance_`` holds one value per input row.
    """

    def fit(self, X, y, **fit_params):
        X, y = check_X_y(X, y, dtype=np.float64)
        order, k = _clean_first(y)
        rel = self._relevance(X[order], k, **fit_params)
        relevance = np.empty_like(rel)
        relevance[order] = rel
        self.relevance_ = relevance
        self.n_clean_ = k
        return self

    def fit_predict(self, X, y, **fit_params):
        return self.fit(X, y, **fit_params).relevance_

    def _relevance(self, X, k, **fit_params):  # pragma: no cover - abstract
        raise NotImplementedError


class GCNCleaner(BaseCleaner):
    """Relevance from a two-layer GCN trained to separate clean from noisy rows.

    Parameters
    ----------
    lam : float
        Weight of the noisy term in the binary cross-entropy.
    k_nn : int
        Reciprocal neighbourhood size of the affinity graph.
    n_iter, learning_rate, dropout, n_hidden : see :class:`GcnTrainConfig`.
    random_state : int
    """

    def __init__(self, lam=1.0, k_nn=50, n_iter=100, learning_rate=0.1, dropout=0.5,
                 n_hidden=16, random_state=0):
        self.lam = lam
        self.k_nn = k_nn
        self.n_iter = n_iter
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.n_hidden = n_hidden
        self.random_state = random_state

    def _config(self):
        return GcnTrainConfig(self.lam, self.n_iter, self.learning_rate, self.dropout,
                              self.n_hidden, self.random_state)

    def _propagation(self, X):
        self.graph_ = build_affinity(X, self.k_nn)
        return normalize_row_stochastic(self.graph_)

    def _relevance(self, X, k):
        self.params_, rel = train_gcn(X, self._propagation(X), k, self._config())
        return rel


class MLPCleaner(GCNCleaner):
    """The GCN cleaner without graph propagation."""

    def __init__(self, lam=1.0, n_iter=100, learning_rate=0.1, dropout=0.5, n_hidden=16,
                 random_state=0):
        super().__init__(lam=lam, k_nn=0, n_iter=n_iter, learning_rate=learning_rate,
                         dropout=dropout, n_hidden=n_hidden, random_state=random_state)

    def _relevance(self, X, k):
        self.params_, rel = train_mlp(X, k, self._config())
        return rel


class LabelPropagationCleaner(BaseCleaner):
    def __init__(self, alpha=0.9, k_nn=50, tol=1e-10, max_iter=1000):
        self.alpha = alpha
        self.k_nn = k_nn
        self.tol = tol
        self.max_iter = max_iter

    def _relevance(self, X, k):
        self.graph_ = build_affinity(X, self.k_nn)
        rel, raw = label_propagation(self.graph_, np.arange(k),
                                     LpConfig(self.alpha, self.tol, self.max_iter))
        self.raw_ = raw
        return rel


class SimilarityCleaner(BaseCleaner):
    def _relevance(self, X, k):
        return similarity_relevance(X, np.arange(k))


class BetaCleaner(BaseCleaner):
    def __init__(self, beta=1.0):
        self.beta = beta

    def _relevance(self, X, k):
        return beta_relevance(X.shape[0], np.arange(k), self.beta)


class LinearCleaner(BaseCleaner):
    """Logistic regression of clean rows against externally supplied negatives.

    ``fit(X, y, negatives=...)`` where ``negatives`` are feature rows drawn
    from other classes (see :func:`draw_negatives`).
    """

    def __init__(self, l2=1e-2, learning_rate=2.0, tol=1e-6, max_iter=20000):
        self.l2 = l2
        self.learning_rate = learning_rate
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, negatives=None):
        if negatives is None:
            raise ContractError("LinearCleaner.fit requires negatives from other classes")
        negatives = check_array(negatives, dtype=np.float64)
        return super().fit(X, y, negatives=negatives)

    def _relevance(self, X, k, negatives=None):
        return linear_relevance(X, np.arange(k), negatives, self.l2, self.learning_rate,
                                self.tol, self.max_iter)


CLEANERS = ("gcn", "mlp", "lp", "similarity", "beta", "linear", "clean")


def make_cleaner(method, *, lambda_=1.0, beta=1.0, k_nn=50, gcn=None, lp=None, seed=0):
    """Estimator for a method name. ``clean`` means clean-only (beta = 0)."""
    gcn = gcn or GcnTrainConfig(lambda_=lambda_)
    lp = lp or LpConfig()
    if method == "gcn":
        return GCNCleaner(lambda_, k_nn, gcn.iterations, gcn.lr, gcn.dropout, gcn.hidden, seed)
    if method == "mlp":
        return MLPCleaner(lambda_, gcn.iterations, gcn.lr, gcn.dropout, gcn.hidden, seed)
    if method == "lp":
        return LabelPropagationCleaner(lp.alpha, k_nn, lp.tol, lp.max_iter)
    if method == "similarity":
        return SimilarityCleaner()
    if method == "beta":
        return BetaCleaner(beta)
    if method == "clean":
        return BetaCleaner(0.0)
    if method == "linear":
        return LinearCleaner()
    raise ContractError(f"unknown cleaning method {method!r}; choose from {', '.join(CLEANERS)}")
