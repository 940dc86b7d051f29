"""Episodic few-shot evaluation, hyperparameter sweeps and relevance reports."""
from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .classifier import (
    DEFAULT_SCALE,
    TrainConfig,
    compute_prototypes,
    cosine_scores,
    rank_classes,
    train_cosine,
)
from .cleaners import (
    GcnTrainConfig,
    LinearCleaner,
    LpConfig,
    RelevanceMap,
    draw_negatives,
    make_cleaner,
)
from .exceptions import ContractError
from .io import header_comments
from .numerics import derive_seed, make_rng

__all__ = [
    "FewShotTask",
    "Method",
    "EpisodeResult",
    "EvalReport",
    "RelevanceReport",
    "SweepResult",
    "topk_accuracy",
    "clean_class",
    "parallel_map",
    "run_episode",
    "evaluate",
    "sweep_lambda",
    "sweep_beta",
    "relevance_report",
    "episode_relevance_report",
    "cumulative_histogram",
    "write_report_csv",
    "write_summary_csv",
    "write_histogram_csv",
]


@dataclass(frozen=True)
class FewShotTask:
    """Features plus, per class, a clean pool, a noisy set and test examples.

    All index arrays refer to rows of ``X``.
    """

    X: np.ndarray
    ids: tuple
    class_ids: tuple
    clean_pool: dict
    noisy: dict
    test_rows: np.ndarray
    test_labels: tuple
    flags: dict = field(default_factory=dict)  # (row, class) -> is positive

    @classmethod
    def from_store(cls, store, labels, test, flags=None):
        """Assemble from a feature store, label table, ``[(id, class)]`` test rows
        and optional ``{(id, class): is_positive}`` flags."""
        index = store.index()

        def row(i):
            try:
                return index[i]
            except KeyError:
                raise ContractError(f"id {i!r} not found in feature store") from None

        classes = tuple(labels.classes())
        clean = {c: np.array([row(i) for i in labels.ids_for(c, "clean")], dtype=np.intp)
                 for c in classes}
        noisy = {c: np.array([row(i) for i in labels.ids_for(c, "noisy")], dtype=np.intp)
                 for c in classes}
        unknown = sorted({c for _, c in test} - set(classes))
        if unknown:
            raise ContractError(f"test classes without training labels: {unknown}")
        test_rows = np.array([row(i) for i, _ in test], dtype=np.intp)
        f = {}
        for (i, c), pos in (flags or {}).items():
            if i in index:
                f[(index[i], c)] = bool(pos)
        return cls(store.features, store.ids, classes, clean, noisy, test_rows,
                   tuple(c for _, c in test), f)

    @classmethod
    def from_synth(cls, data):
        return cls.from_store(data.store, data.labels, data.test, data.flags)

    def subset(self, classes):
        classes = tuple(c for c in self.class_ids if c in set(classes))
        keep = np.array([c in classes for c in self.test_labels], dtype=bool)
        return replace(
            self,
            class_ids=classes,
            clean_pool={c: self.clean_pool[c] for c in classes},
            noisy={c: self.noisy[c] for c in classes},
            test_rows=self.test_rows[keep],
            test_labels=tuple(np.array(self.test_labels, dtype=object)[keep]),
        )

    def split_classes(self, n_validation, seed=0):
        """Disjoint (validation, test) tasks over a seeded split of the classes."""
        if not 0 < n_validation < len(self.class_ids):
            raise ContractError("validation split must leave classes on both sides")
        perm = make_rng(seed).permutation(len(self.class_ids))
        val = {self.class_ids[i] for i in perm[:n_validation]}
        return self.subset(val), self.subset(set(self.class_ids) - val)


@dataclass(frozen=True)
class Method:
    """A cleaning method together with the classifier used on top of it.

    ``name`` is one of ``gcn, mlp, lp, similarity, beta, linear, clean``;
    ``classifier`` is ``proto`` (relevance-weighted prototypes) or ``cosine``.
    """

    name: str = "gcn"
    lam: float = 1.0
    beta: float = 1.0
    k_nn: int = 50
    gcn: GcnTrainConfig = field(default_factory=GcnTrainConfig)
    lp: LpConfig = field(default_factory=LpConfig)
    classifier: str = "proto"
    train: TrainConfig = field(default_factory=TrainConfig)
    scale: float = DEFAULT_SCALE

    @property
    def param(self):
        if self.name in ("gcn", "mlp"):
            return self.lam
        if self.name == "beta":
            return self.beta
        return ""


@dataclass(frozen=True)
class EpisodeResult:
    accuracy: float
    selection: dict  # class -> clean rows drawn for this episode
    relevance: dict  # class -> RelevanceMap over [selected clean, noisy]


@dataclass(frozen=True)
class EvalReport:
    method: str
    k_shots: int
    param: object
    accuracies: tuple

    @property
    def mean(self):
        return float(np.mean(self.accuracies))

    @property
    def std(self):
        return float(np.std(self.accuracies))


@dataclass(frozen=True)
class RelevanceReport:
    mean_pos: float
    mean_neg: float
    noise_ratio: float
    n_pos: int
    n_neg: int

    @property
    def defined(self):
        return self.n_pos + self.n_neg > 0


@dataclass(frozen=True)
class SweepResult:
    param: str
    reports: tuple  # EvalReport per (value, k_shots)
    best: dict  # k_shots -> best value (beta: same value for every k)


def topk_accuracy(ranked, true, top_k):
    """Fraction of rows whose true label appears in the first ``top_k`` entries of ``ranked``."""
    ranked = np.asarray(ranked, dtype=object)
    true = np.asarray(true, dtype=object)
    if ranked.ndim != 2 or ranked.shape[0] != true.shape[0]:
        raise ContractError("ranked predictions must be (n, r) with one row per label")
    if ranked.shape[1] < top_k:
        raise ContractError(f"rankings have length {ranked.shape[1]} < top_k={top_k}")
    if true.shape[0] == 0:
        return 0.0
    hit = (ranked[:, :top_k] == true[:, None]).any(axis=1)
    return float(hit.mean())


def clean_class(method, X_ext, k, seed, negatives=None):
    """Relevance for one class' extended set whose first ``k`` rows are clean."""
    y = np.zeros(X_ext.shape[0], dtype=bool)
    y[:k] = True
    est = make_cleaner(method.name, lambda_=method.lam, beta=method.beta, k_nn=method.k_nn,
                       gcn=replace(method.gcn, lambda_=method.lam), lp=method.lp, seed=seed)
    if isinstance(est, LinearCleaner):
        return est.fit_predict(X_ext, y, negatives=negatives)
    return est.fit_predict(X_ext, y)


def _other_pool(task, c):
    rows = [np.concatenate([task.clean_pool[o], task.noisy[o]])
            for o in task.class_ids if o != c]
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.intp)
    return task.X[rows.astype(np.intp)]


def run_episode(task, k_shots, method, seed, episode=0, top_k=1):
    """Draw ``k_shots`` clean examples per class, clean, fit the classifier, score the test set."""
    rng = make_rng(seed, episode)
    selection = {}
    for c in task.class_ids:
        pool = task.clean_pool[c]
        if pool.size < k_shots:
            raise ContractError(
                f"class {c!r} has {pool.size} clean examples, {k_shots} requested"
            )
        selection[c] = np.sort(rng.choice(pool, size=k_shots, replace=False))

    rows, labels, rel_all, relevance = [], [], [], {}
    for ci, c in enumerate(task.class_ids):
        ext = np.concatenate([selection[c], task.noisy[c]])
        X_ext = task.X[ext]
        negatives = None
        cls_seed = derive_seed(seed, episode, ci)
        if method.name == "linear":
            negatives = draw_negatives(_other_pool(task, c), k_shots, cls_seed)
        rel = clean_class(method, X_ext, k_shots, cls_seed, negatives)
        relevance[c] = RelevanceMap.from_clean_first(c, [task.ids[r] for r in ext], rel, k_shots)
        rows.append(ext)
        labels.extend([c] * ext.size)
        rel_all.append(rel)
    rows = np.concatenate(rows)
    rel_all = np.concatenate(rel_all)

    weights = compute_prototypes(task.X[rows], labels, rel_all, task.class_ids, method.scale)
    if method.classifier == "cosine":
        cfg = replace(method.train, seed=derive_seed(seed, episode, len(task.class_ids)))
        weights = train_cosine(task.X[rows], labels, rel_all, cfg, weights)
    elif method.classifier != "proto":
        raise ContractError(f"unknown classifier {method.classifier!r}")

    if task.test_rows.size == 0:
        raise ContractError("empty test set")
    scores = cosine_scores(weights, task.X[task.test_rows])
    ranked = np.array(weights.class_ids, dtype=object)[rank_classes(scores)]
    acc = topk_accuracy(ranked, task.test_labels, min(top_k, weights.n_classes))
    return EpisodeResult(acc, selection, relevance)


def parallel_map(jobs, calls):
    """Run ``[(fn, args), ...]`` on a thread pool; results keep call order."""
    if jobs is None or jobs == 1 or len(calls) <= 1:
        return [fn(*args) for fn, args in calls]
    return Parallel(n_jobs=jobs, prefer="threads")(delayed(fn)(*args) for fn, args in calls)


def evaluate(task, method, k_shots, episodes=5, seed=0, top_k=1, jobs=1):
    """Mean/std accuracy over ``episodes`` seeded episodes."""
    if episodes < 1:
        raise ContractError("at least one episode is required")
    calls = [(run_episode, (task, k_shots, method, seed, e, top_k)) for e in range(episodes)]
    results = parallel_map(jobs, calls)
    return EvalReport(method.name, k_shots, method.param, tuple(r.accuracy for r in results))


def _sweep(task, method, attr, grid, k_shots_list, episodes, seed, top_k, jobs):
    if len(grid) == 0:
        raise ContractError("empty sweep grid")
    grid = sorted(float(g) for g in grid)
    reports, keyed = [], []
    for value in grid:
        m = replace(method, **{attr: value})
        for k in k_shots_list:
            rep = evaluate(task, m, k, episodes, seed, top_k, jobs)
            reports.append(rep)
            keyed.append((value, k, rep.mean))
    return grid, reports, keyed


def sweep_lambda(task, grid, k_shots_list=(1, 2, 5, 10, 20), episodes=5, seed=0, top_k=1,
                 method=None, jobs=1):
    """Best lambda per number of shots; ties go to the smaller lambda."""
    method = replace(method or Method("gcn"))
    _, reports, keyed = _sweep(task, method, "lam", grid, k_shots_list, episodes, seed, top_k,
                               jobs)
    best = {}
    for k in k_shots_list:
        best_val, best_mean = None, -np.inf
        # grid is ascending and only a strict improvement wins
        for value, kk, mean in keyed:
            if kk == k and mean > best_mean:
                best_val, best_mean = value, mean
        best[k] = best_val
    return SweepResult("lambda", tuple(reports), best)


def sweep_beta(task, grid, k_shots_list=(1, 2, 5, 10, 20), episodes=5, seed=0, top_k=1,
               method=None, jobs=1):
    """Single beta maximizing accuracy averaged over all shot counts; ties go to the smaller beta."""
    method = replace(method or Method("beta"), name="beta")
    grid, reports, keyed = _sweep(task, method, "beta", grid, k_shots_list, episodes, seed, top_k,
                                  jobs)
    best_val, best_mean = None, -np.inf
    for value in grid:
        mean = np.mean([m for v, _, m in keyed if v == value])
        if mean > best_mean:
            best_val, best_mean = value, mean
    return SweepResult("beta", tuple(reports), {k: best_val for k in k_shots_list})


def relevance_report(relevance, positive):
    """Mean relevance of ground-truth positive and negative noisy examples.

    Parameters
    ----------
    relevance : array-like
        Relevance of noisy examples.
    positive : array-like of bool
        Ground truth for the same examples.
    """
    rel = np.asarray(relevance, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    if rel.shape != pos.shape:
        raise ContractError("relevance and flags differ in length")
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    mean_pos = float(rel[pos].mean()) if n_pos else float("nan")
    mean_neg = float(rel[~pos].mean()) if n_neg else float("nan")
    ratio = n_neg / (n_pos + n_neg) if n_pos + n_neg else float("nan")
    return RelevanceReport(mean_pos, mean_neg, ratio, n_pos, n_neg)


def episode_relevance_report(task, result):
    """:func:`relevance_report` over every flagged noisy example of an episode."""
    rel, pos = [], []
    index = {i: r for r, i in enumerate(task.ids)}
    for c, m in result.relevance.items():
        for i, r, p in zip(m.ids, m.relevance, m.provenance):
            key = (index[i], c)
            if p == "noisy" and key in task.flags:
                rel.append(r)
                pos.append(task.flags[key])
    return relevance_report(rel, pos)


def cumulative_histogram(values, bins=10):
    """``[(bin_upper, count of values <= bin_upper)]`` over equal bins of ``[0, 1]``."""
    values = np.asarray(values, dtype=np.float64)
    uppers = np.linspace(0.0, 1.0, bins + 1)[1:]
    return [(float(u), int(np.sum(values <= u + 1e-12))) for u in uppers]


def _write(path, header, rows, comments):
    buf = _io.StringIO()
    if comments:
        buf.write(header_comments(**comments))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def _fmt_param(p):
    return "" if p == "" or p is None else f"{p:g}"


def write_report_csv(path, reports, comments=None):
    rows = []
    for r in reports:
        for e, acc in enumerate(r.accuracies):
            rows.append((r.method, r.k_shots, _fmt_param(r.param), e, f"{acc:.6f}"))
    _write(path, ["method", "k_shots", "param", "episode", "accuracy"], rows, comments)


def write_summary_csv(path, reports, comments=None):
    rows = [(r.method, r.k_shots, _fmt_param(r.param), f"{r.mean:.6f}", f"{r.std:.6f}")
            for r in reports]
    _write(path, ["method", "k_shots", "param", "mean", "std"], rows, comments)


def write_histogram_csv(path, values, bins=10, comments=None):
    rows = [(f"{u:.2f}", n) for u, n in cumulative_histogram(values, bins)]
    _write(path, ["bin_upper", "count"], rows, comments)
