"""Whole-dataset operations driven by a feature store and a label table."""
from __future__ import annotations

import numpy as np

from .classifier import compute_prototypes, train_cosine
from .cleaners import RelevanceMap, draw_negatives
from .eval import Method, clean_class, parallel_map
from .exceptions import ContractError
from .numerics import derive_seed

__all__ = ["clean_all", "training_set", "fit_classifier"]


def _clean_one(store, labels, classes, ci, method, seed):
    c = classes[ci]
    clean_ids = labels.ids_for(c, "clean")
    noisy_ids = labels.ids_for(c, "noisy")
    if not clean_ids:
        raise ContractError(f"class {c!r} has no clean examples")
    ids = clean_ids + noisy_ids
    X_ext = store.rows(ids)
    cls_seed = derive_seed(seed, ci)
    negatives = None
    if method.name == "linear":
        other = [r.id for r in labels.rows if r.cls != c]
        if not other:
            raise ContractError("the linear baseline needs at least two classes")
        negatives = draw_negatives(store.rows(other), len(clean_ids), cls_seed)
    rel = clean_class(method, X_ext, len(clean_ids), cls_seed, negatives)
    return RelevanceMap.from_clean_first(c, ids, rel, len(clean_ids))


def clean_all(store, labels, method=None, seed=0, jobs=1):
    """One :class:`RelevanceMap` per class (sorted by class id).

    Every clean row of a class is used; per-class jobs get independent seeds
    derived from ``seed`` and the class position, so the result does not
    depend on ``jobs``.
    """
    method = method or Method()
    classes = labels.classes()
    calls = [(_clean_one, (store, labels, classes, ci, method, seed)) for ci in range(len(classes))]
    return parallel_map(jobs, calls)


def training_set(store, maps):
    """Stack ``(X, labels, relevance)`` rows from relevance maps."""
    X, y, r = [], [], []
    for m in maps:
        X.append(store.rows(m.ids))
        y.extend([m.class_id] * len(m.ids))
        r.append(m.relevance)
    if not X:
        raise ContractError("no training examples")
    return np.vstack(X), y, np.concatenate(r)


def fit_classifier(store, maps, scale, cfg=None, init=None):
    """Prototypes from ``maps`` and, if ``cfg`` is given, cosine-classifier training."""
    X, y, rel = training_set(store, maps)
    classes = sorted({m.class_id for m in maps})
    weights = init if init is not None else compute_prototypes(X, y, rel, classes, scale)
    if cfg is not None:
        weights = train_cosine(X, y, rel, cfg, weights)
    return weights
