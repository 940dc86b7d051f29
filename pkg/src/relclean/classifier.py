"""Relevance-weighted prototypes and cosine classifiers.

Weights are stored as a ``d x K`` matrix, one column per class, together with
the class ids and the logit scale ``s``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ContractError, NumericalError
from .numerics import make_rng

__all__ = [
    "ClassifierWeights",
    "TrainConfig",
    "compute_prototypes",
    "cosine_scores",
    "cosine_predict",
    "rank_classes",
    "classifier_loss",
    "classifier_grad",
    "cosine_lr",
    "train_cosine",
    "concat_all_classes",
    "PrototypeClassifier",
    "CosineClassifier",
]

DEFAULT_SCALE = 10.0


@dataclass(frozen=True)
class ClassifierWeights:
    W: np.ndarray
    class_ids: tuple
    s: float = DEFAULT_SCALE

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "class_ids", tuple(str(c) for c in self.class_ids))
        if W.ndim != 2 or W.shape[1] != len(self.class_ids):
            raise ContractError(f"W has shape {W.shape} but {len(self.class_ids)} class ids given")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ContractError("duplicate class id in classifier weights")
        if not np.all(np.isfinite(W)):
            raise NumericalError("non-finite classifier weights")
        if not (np.isfinite(self.s) and self.s > 0):
            raise ContractError(f"scale s must be finite and positive, got {self.s}")

    @property
    def n_classes(self):
        return self.W.shape[1]

    @property
    def dim(self):
        return self.W.shape[0]


@dataclass
class TrainConfig:
    """Cosine-classifier training: cosine-annealed lr 0.1 -> 0.001, relevance floor 0.1."""

    epochs: int = 30
    batch_size: int = 64
    lr_start: float = 0.1
    lr_end: float = 0.001
    floor: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.floor < 1.0:
            raise ContractError(f"relevance floor must lie in [0, 1), got {self.floor}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ContractError("epochs >= 0 and batch_size >= 1 are required")


def _normalize_columns(W):
    norms = np.linalg.norm(W, axis=0)
    if np.any(norms == 0.0):
        raise ContractError("classifier weight column with zero norm")
    return W / norms, norms


def _normalize_rows(X):
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0.0):
        raise ContractError(f"zero-norm feature at row {int(np.flatnonzero(norms == 0)[0])}")
    return X / norms[:, None]


def _encode(labels, class_ids):
    index = {c: i for i, c in enumerate(class_ids)}
    try:
        return np.array([index[str(y)] for y in labels], dtype=np.intp)
    except KeyError as exc:
        raise ContractError(f"label {exc.args[0]!r} is not a known class") from None


def compute_prototypes(X, labels, relevance, class_ids, s=DEFAULT_SCALE):
    """Relevance-weighted mean of the raw feature vectors of each class.

    Parameters
    ----------
    X : ndarray, shape (n, d)
    labels : sequence, length n
        Class id of each row. A multi-labelled example appears once per class.
    relevance : ndarray, shape (n,)
    class_ids : sequence of str
        Output column order.
    """
    X = np.asarray(X, dtype=np.float64)
    rel = np.asarray(relevance, dtype=np.float64)
    y = _encode(labels, class_ids)
    K = len(class_ids)
    W = np.zeros((X.shape[1], K))
    for c in range(K):
        sel = y == c
        total = rel[sel].sum()
        if not total > 0:
            raise ContractError(f"class {class_ids[c]!r} has zero total relevance")
        W[:, c] = rel[sel] @ X[sel] / total
    return ClassifierWeights(W, class_ids, s)


def cosine_scores(weights, X):
    """Cosine similarity between every row of ``X`` and every class column, ``(n, K)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    What, _ = _normalize_columns(weights.W)
    return _normalize_rows(X) @ What


def rank_classes(scores):
    """Column indices sorted by descending score, ties by ascending index."""
    return np.argsort(-scores, axis=1, kind="stable")


def cosine_predict(weights, x, top_k=1):
    """Ranked ``[(class_id, cosine), ...]`` of length ``top_k`` for a single feature vector."""
    if not 1 <= top_k <= weights.n_classes:
        raise ContractError(f"top_k must lie in [1, {weights.n_classes}], got {top_k}")
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.linalg.norm(x) > 0:
        raise ContractError("cannot classify a zero-norm feature vector")
    scores = cosine_scores(weights, x[None, :])
    order = rank_classes(scores)[0, :top_k]
    return [(weights.class_ids[j], float(scores[0, j])) for j in order]


def _class_totals(y, rel, K):
    return np.bincount(y, weights=rel, minlength=K)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_terms(W, X, y, rel, s, totals):
    What, norms = _normalize_columns(W)
    Xhat = _normalize_rows(X)
    z = s * (Xhat @ What)
    zmax = z.max(axis=1, keepdims=True)
    logsum = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    logp = z[np.arange(len(y)), y] - logsum
    coef = np.zeros_like(rel)
    nz = totals[y] > 0
    coef[nz] = rel[nz] / totals[y][nz]
    return What, norms, Xhat, z, logp, coef


def classifier_loss(weights, X, labels, relevance, s=None, class_totals=None):
    """Weighted cross-entropy over s-scaled cosine logits.

    Each example's term is weighted by its relevance divided by the total
    relevance of its class, so every class contributes with unit mass.
    ``class_totals`` overrides the per-class totals (otherwise computed from
    this batch).
    """
    s = weights.s if s is None else s
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rel = np.asarray(relevance, dtype=np.float64)
    y = _encode(labels, weights.class_ids)
    totals = _class_totals(y, rel, weights.n_classes) if class_totals is None else class_totals
    *_, logp, coef = _loss_terms(weights.W, X, y, rel, s, totals)
    loss = -float(coef @ logp)
    if not np.isfinite(loss):
        raise NumericalError("non-finite classifier loss")
    return loss


def _grad(W, X, y, rel, s, totals):
    What, norms, Xhat, z, _, coef = _loss_terms(W, X, y, rel, s, totals)
    P = _softmax(z)
    P[np.arange(len(y)), y] -= 1.0
    G = s * Xhat.T @ (coef[:, None] * P)  # d x K, w.r.t. normalized columns
    # project out the radial component and undo the column scaling
    G = (G - What * np.sum(What * G, axis=0)) / norms
    if not np.all(np.isfinite(G)):
        raise NumericalError("non-finite classifier gradient")
    return G


def classifier_grad(weights, X, labels, relevance, s=None, class_totals=None):
    """Gradient of :func:`classifier_loss` with respect to the unnormalized ``W``."""
    s = weights.s if s is None else s
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    rel = np.asarray(relevance, dtype=np.float64)
    y = _encode(labels, weights.class_ids)
    totals = _class_totals(y, rel, weights.n_classes) if class_totals is None else class_totals
    return _grad(weights.W, X, y, rel, s, totals)


def cosine_lr(step, total, start=0.1, end=0.001):
    if total <= 0:
        return start
    return end + 0.5 * (start - end) * (1.0 + np.cos(np.pi * step / total))


def train_cosine(X, labels, relevance, cfg=None, init=None):
    """Mini-batch gradient descent on :func:`classifier_loss`, starting from ``init``.

    Examples with relevance below ``cfg.floor`` are dropped. Class totals are
    taken over the kept examples so the summed batch losses of one epoch equal
    the full loss.
    """
    cfg = cfg or TrainConfig()
    if init is None:
        raise ContractError("train_cosine needs initial weights (use compute_prototypes)")
    X = np.asarray(X, dtype=np.float64)
    rel = np.asarray(relevance, dtype=np.float64)
    y = _encode(labels, init.class_ids)
    keep = rel >= cfg.floor
    X, y, rel = X[keep], y[keep], rel[keep]
    W = init.W.copy()
    if cfg.epochs == 0 or X.shape[0] == 0:
        return ClassifierWeights(W, init.class_ids, init.s)
    totals = _class_totals(y, rel, init.n_classes)
    n = X.shape[0]
    n_batches = -(-n // cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    rng = make_rng(cfg.seed)
    step = 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for b in range(n_batches):
            idx = perm[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            lr = cosine_lr(step, total_steps, cfg.lr_start, cfg.lr_end)
            try:
                G = _grad(W, X[idx], y[idx], rel[idx], init.s, totals)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {b}: {exc}") from exc
            W = W - lr * G
            step += 1
    return ClassifierWeights(W, init.class_ids, init.s)


def concat_all_classes(base, novel):
    """Stack base-class and novel-class columns into one classifier (base first)."""
    if base is None or base.n_classes == 0:
        return novel
    if base.dim != novel.dim:
        raise ContractError(f"dimension mismatch: base d={base.dim}, novel d={novel.dim}")
    if base.s != novel.s:
        raise ContractError(f"scale mismatch: base s={base.s}, novel s={novel.s}")
    clash = set(base.class_ids) & set(novel.class_ids)
    if clash:
        raise ContractError(f"class ids present in both classifiers: {sorted(clash)}")
    return ClassifierWeights(np.hstack([base.W, novel.W]), base.class_ids + novel.class_ids, base.s)


class _CosineBase(ClassifierMixin, BaseEstimator):
    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        return cosine_scores(self.weights_, X)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_topk(self, X, top_k=5):
        """Class labels of the ``top_k`` best-scoring classes per row, best first."""
        order = rank_classes(self.decision_function(X))[:, :top_k]
        return self.classes_[order]

    def _prototypes(self, X, y, sample_weight):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        rel = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
        ids = [str(c) for c in self.classes_]
        return X, y, rel, compute_prototypes(X, [str(v) for v in y], rel, ids, self.scale)


class PrototypeClassifier(_CosineBase):
    """Nearest class prototype by cosine similarity; ``sample_weight`` is the relevance."""

    def __init__(self, scale=DEFAULT_SCALE):
        self.scale = scale

    def fit(self, X, y, sample_weight=None):
        *_, self.weights_ = self._prototypes(X, y, sample_weight)
        return self


class CosineClassifier(_CosineBase):
    """Cosine classifier initialized at the prototypes and trained on the weighted loss."""

    def __init__(self, scale=DEFAULT_SCALE, epochs=30, batch_size=64, lr_start=0.1,
                 lr_end=0.001, floor=0.1, random_state=0):
        self.scale = scale
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.floor = floor
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        X, y, rel, init = self._prototypes(X, y, sample_weight)
        cfg = TrainConfig(self.epochs, self.batch_size, self.lr_start, self.lr_end, self.floor,
                          self.random_state)
        self.weights_ = train_cosine(X, [str(v) for v in y], rel, cfg, init)
        return self
