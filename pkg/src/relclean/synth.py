"""Seeded synthetic benchmarks with known clean / positive / negative structure.

Each class ``c`` has a centre on the unit sphere. Examples of the class are
``normalize(centre + z / sqrt(concentration))`` with ``z ~ N(0, I/d)``, so the
typical angle to the centre is ``atan(1/sqrt(concentration))``.

For every class the generator emits a pool of clean examples, a set of noisy
examples labelled ``c`` of which a ``noise_ratio`` fraction are negatives
(drawn from the distributions of a few "confuser" classes, or uniformly on
the sphere), and held-out test examples.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ContractError
from .io import FeatureStore, LabelRow, LabelTable
from .numerics import make_rng

__all__ = ["SynthSpec", "SynthData", "generate", "standard_benchmark", "sample_sphere"]


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic benchmark.

    ``concentration=inf`` places every example exactly on its class centre.
    ``confusers`` is the number of other classes a class' negatives are drawn
    from (``None``: all other classes). ``negative_source="uniform"`` draws
    negatives uniformly on the sphere instead.
    """

    n_classes: int = 10
    dim: int = 32
    clean_per_class: int = 20
    noisy_per_class: int = 100
    noise_ratio: float = 0.5
    test_per_class: int = 100
    concentration: float = 0.5
    confusers: int | None = 2
    negative_source: str = "classes"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "clean_per_class", "noisy_per_class", "test_per_class"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be non-negative")
        if self.dim < 2:
            raise ContractError(f"dim must be at least 2 for sphere sampling, got {self.dim}")
        if not self.concentration > 0:
            raise ContractError(f"concentration must be positive, got {self.concentration}")
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ContractError(f"noise_ratio must lie in [0, 1], got {self.noise_ratio}")
        if self.negative_source not in ("classes", "uniform"):
            raise ContractError("negative_source must be 'classes' or 'uniform'")
        if self.confusers is not None and self.confusers < 1:
            raise ContractError("confusers must be >= 1 or None")

    @property
    def negatives_per_class(self):
        return int(round(self.noisy_per_class * self.noise_ratio))

    @property
    def positives_per_class(self):
        return self.noisy_per_class - self.negatives_per_class


@dataclass(frozen=True)
class SynthData:
    """Generated benchmark.

    Attributes
    ----------
    store : FeatureStore
        Every generated example (clean pool, noisy, test).
    labels : LabelTable
        Clean and noisy label rows; test examples are not included.
    flags : dict
        ``(id, class) -> True`` for positive noisy examples, ``False`` for negatives.
    test : list of (id, class)
    centers : ndarray, shape (K, d)
    origin : dict
        ``id -> index of the class whose distribution generated it`` (``-1``
        for uniform noise).
    """

    spec: SynthSpec
    store: FeatureStore
    labels: LabelTable
    flags: dict
    test: list
    centers: np.ndarray
    origin: dict

    def flag_rows(self):
        return [(i, c, "positive" if pos else "negative") for (i, c), pos in self.flags.items()]


def sample_sphere(rng, n, d):
    z = rng.standard_normal((n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _perturb(rng, center, n, concentration):
    d = center.shape[0]
    z = rng.standard_normal((n, d)) / np.sqrt(d)
    if np.isinf(concentration):
        return np.repeat(center[None, :], n, axis=0)
    x = center[None, :] + z / np.sqrt(concentration)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def class_name(c):
    return f"class{c:03d}"


def generate(spec):
    """Build a :class:`SynthData` from ``spec``; identical specs give identical data."""
    rng = make_rng(spec.seed)
    K, d = spec.n_classes, spec.dim
    centers = sample_sphere(rng, K, d)

    confuser_sets = []
    for c in range(K):
        others = np.array([j for j in range(K) if j != c], dtype=np.intp)
        if spec.confusers is not None and others.size > spec.confusers:
            others = np.sort(rng.choice(others, size=spec.confusers, replace=False))
        confuser_sets.append(others)

    ids, feats, rows, test = [], [], [], []
    flags, origin = {}, {}

    def emit(name, x, src):
        ids.append(name)
        feats.append(x)
        origin[name] = src

    for c in range(K):
        cname = class_name(c)
        for t, x in enumerate(_perturb(rng, centers[c], spec.clean_per_class, spec.concentration)):
            name = f"{cname}_clean_{t:04d}"
            emit(name, x, c)
            rows.append(LabelRow(name, cname, "clean"))

        n_pos, n_neg = spec.positives_per_class, spec.negatives_per_class
        pos = _perturb(rng, centers[c], n_pos, spec.concentration)
        others = confuser_sets[c]
        if spec.negative_source == "uniform" or others.size == 0:
            neg = sample_sphere(rng, n_neg, d)
            neg_src = np.full(n_neg, -1)
        else:
            neg_src = rng.choice(others, size=n_neg, replace=True)
            neg = np.empty((n_neg, d))
            for j in np.unique(neg_src):
                sel = neg_src == j
                neg[sel] = _perturb(rng, centers[j], int(sel.sum()), spec.concentration)
        # interleave positives and negatives in a seeded order
        is_pos = np.zeros(n_pos + n_neg, dtype=bool)
        is_pos[:n_pos] = True
        perm = rng.permutation(n_pos + n_neg)
        noisy = np.vstack([pos, neg]) if n_pos + n_neg else np.empty((0, d))
        src = np.concatenate([np.full(n_pos, c), neg_src]).astype(int)
        for t, p in enumerate(perm):
            name = f"{cname}_noisy_{t:04d}"
            emit(name, noisy[p], int(src[p]))
            rows.append(LabelRow(name, cname, "noisy"))
            flags[(name, cname)] = bool(is_pos[p])

        for t, x in enumerate(_perturb(rng, centers[c], spec.test_per_class, spec.concentration)):
            name = f"{cname}_test_{t:04d}"
            emit(name, x, c)
            test.append((name, cname))

    store = FeatureStore(tuple(ids), np.array(feats).reshape(len(ids), d))
    return SynthData(spec, store, LabelTable(tuple(rows)), flags, test, centers, origin)


def standard_benchmark(seed=0, **overrides):
    """The desk-scale benchmark: 10 classes, d=32, 100 noisy per class at noise 0.5,
    100 test points per class."""
    return replace(SynthSpec(seed=seed), **overrides)
