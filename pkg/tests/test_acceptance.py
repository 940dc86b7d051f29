"""Acceptance criteria, one test per criterion.

Each test reports a ``[PASS]``/``[FAIL] criterion N`` line through the
``criterion`` fixture; the lines are collected in the pytest terminal summary.
"""
import struct
import time

import numpy as np
import pytest
import scipy.sparse as sp

from relclean.classifier import (
    ClassifierWeights,
    TrainConfig,
    classifier_grad,
    classifier_loss,
    compute_prototypes,
    cosine_scores,
    train_cosine,
)
from relclean.cleaners import (
    GcnTrainConfig,
    gcn_grad,
    gcn_loss,
    init_gcn_params,
    label_propagation,
    train_gcn,
    train_mlp,
)
from relclean.cli import main
from relclean.eval import (
    FewShotTask,
    Method,
    episode_relevance_report,
    run_episode,
    sweep_lambda,
)
from relclean.graph import (
    AffinityGraph,
    build_affinity,
    normalize_row_stochastic,
    normalize_symmetric,
)
from relclean.io import FeatureStore, write_feature_store
from relclean.numerics import make_rng, spmm
from relclean.synth import generate, standard_benchmark

import oracles

LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0)


# ----------------------------------------------------------------- 1. gradients


def test_gradients_match_finite_differences(criterion):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    gcn_errors, cls_errors = [], []
    for trial in range(20):
        n, d, m = int(rng.integers(2, 11)), int(rng.integers(1, 9)), int(rng.integers(1, 5))
        X = rng.standard_normal((n, d))
        A = normalize_row_stochastic(build_affinity(X, int(rng.integers(1, 5))))
        k = int(rng.integers(1, n + 1))
        lam = float(rng.uniform(0.01, 5.0))
        p = init_gcn_params(make_rng(trial), d, m)
        mask = None if trial % 2 else (rng.random((m, n)) < 0.5) * 2.0
        g = gcn_grad(p, A, X, k, lam, mask)
        t1, t2 = p.theta1.copy(), p.theta2.copy()

        def loss():
            return oracles.gcn_bce(oracles.gcn_scores(t1, t2, A, X, mask), k, lam)

        fd1 = oracles.finite_diff(loss, t1)
        fd2 = oracles.finite_diff(loss, t2)
        gcn_errors.append(max(oracles.rel_error(g.theta1, fd1), oracles.rel_error(g.theta2, fd2)))

    for _ in range(20):
        n, d, K = int(rng.integers(2, 11)), int(rng.integers(2, 9)), int(rng.integers(1, 6))
        X = rng.standard_normal((n, d))
        y = rng.integers(0, K, n)
        rel = rng.uniform(0.05, 1.0, n)
        ids = [f"c{i}" for i in range(K)]
        W = rng.standard_normal((d, K))
        labels = [ids[i] for i in y]
        g = classifier_grad(ClassifierWeights(W, ids, 5.0), X, labels, rel)
        fd = oracles.finite_diff(lambda: oracles.cosine_ce(W, X, y, rel, 5.0), W)
        cls_errors.append(oracles.rel_error(g, fd))
    elapsed = time.perf_counter() - start
    worst = max(gcn_errors + cls_errors)
    criterion(1, "gradients vs central differences", worst <= 1e-4 and elapsed < 5,
              f"max rel err {worst:.2e}, {elapsed:.2f}s")


# ------------------------------------------------------------------ 2. oracles


def test_kernels_match_dense_oracles(criterion):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), float(err))

    for _ in range(50):
        n, d = int(rng.integers(1, 51)), int(rng.integers(1, 9))
        X = rng.standard_normal((n, d))
        g = build_affinity(X, int(rng.integers(1, 12)))
        A = g.A.toarray()
        ref = oracles.reciprocal_knn(X, g.k_nn)
        structure = 0.0 if np.array_equal(A > 0, ref > 0) else np.inf
        note("build_affinity", max(np.max(np.abs(A - ref)), structure))
        note("normalize_row_stochastic",
             np.max(np.abs(normalize_row_stochastic(g).toarray() - oracles.row_stochastic(A))))
        note("normalize_symmetric",
             np.max(np.abs(normalize_symmetric(g).toarray() - oracles.symmetric(A))))

        S = sp.csr_matrix(rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.2))
        V = rng.standard_normal((int(rng.integers(1, 5)), n))
        note("spmm", np.max(np.abs(spmm(S, V) - oracles.dense_product(S, V))))

        K = int(rng.integers(1, 6))
        y = np.arange(n) % K if n >= K else np.arange(n)
        K = min(K, n)
        ids = [f"c{i}" for i in range(K)]
        labels = [ids[i] for i in y]
        rel = rng.uniform(0.05, 1.0, n)
        P = compute_prototypes(X, labels, rel, ids)
        note("compute_prototypes", max(
            np.max(np.abs(P.W[:, c] - oracles.weighted_mean(X[y == c], rel[y == c])))
            for c in range(K)))
        W = rng.standard_normal((d, K))
        note("classifier_loss", abs(classifier_loss(ClassifierWeights(W, ids, 10.0), X, labels, rel)
                                    - oracles.cosine_ce(W, X, y, rel, 10.0)))

        F = rng.uniform(0.01, 0.99, n)
        k = int(rng.integers(1, n + 1))
        lam = float(rng.uniform(0, 10))
        note("gcn_loss", abs(gcn_loss(F, k, lam) - oracles.gcn_bce(F, k, lam)))
    elapsed = time.perf_counter() - start
    ok = all(v <= 1e-12 for v in worst.values()) and elapsed < 10
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    criterion(2, "kernels vs dense brute-force oracles", ok, f"{detail}; {elapsed:.2f}s")


# ---------------------------------------------------------- 3. label propagation


def test_label_propagation_solve(criterion):
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(30):
        n = int(rng.integers(2, 51))
        g = build_affinity(rng.standard_normal((n, 5)), int(rng.integers(1, 10)))
        clean = rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)
        _, raw = label_propagation(g, clean)
        y = np.zeros(n)
        y[clean] = 1.0
        direct = np.linalg.solve(np.eye(n) - 0.9 * oracles.symmetric(g.A.toarray()), y)
        worst = max(worst, float(np.max(np.abs(raw - direct))))
    pair = AffinityGraph(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])), 1)
    _, raw2 = label_propagation(pair, [0])
    direct2 = np.linalg.solve(np.array([[1.0, -0.9], [-0.9, 1.0]]), [1.0, 0.0])
    elapsed = time.perf_counter() - start
    ok = (worst <= 1e-8 and np.max(np.abs(raw2 - direct2)) <= 1e-3
          and np.max(np.abs(raw2 - [5.2632, 4.7368])) <= 1e-3 and elapsed < 2)
    criterion(3, "label propagation vs direct solve", ok,
              f"max err {worst:.1e}, 2-node r=({raw2[0]:.4f}, {raw2[1]:.4f}), {elapsed:.2f}s")


# ------------------------------------------------------------- 4. MLP reduction


def test_gcn_with_identity_is_mlp(criterion):
    rng = np.random.default_rng(3)
    X = rng.standard_normal((40, 12))
    cfg = GcnTrainConfig(lambda_=0.5, seed=17)
    p1, r1 = train_gcn(X, sp.identity(40, format="csr"), 4, cfg)
    p2, r2 = train_mlp(X, 4, cfg)
    ok = (np.array_equal(r1, r2) and np.array_equal(p1.theta1, p2.theta1)
          and np.array_equal(p1.theta2, p2.theta2))
    criterion(4, "train_gcn with identity propagation is bit-identical to train_mlp", ok)


# ------------------------------------------------- 5 and 6. standard benchmark


@pytest.fixture(scope="module")
def benchmark_runs():
    start = time.perf_counter()
    # lambda is chosen on a separate benchmark drawn with a different seed
    validation = FewShotTask.from_synth(generate(standard_benchmark(1000)))
    sweep = sweep_lambda(validation, LAMBDA_GRID, k_shots_list=(1,), episodes=5, seed=1000)
    lam = sweep.best[1]
    task = FewShotTask.from_synth(generate(standard_benchmark(0)))
    methods = {"gcn": Method("gcn", lam=lam), "beta=1": Method("beta", beta=1.0),
               "clean-only": Method("clean")}
    runs = {name: [run_episode(task, 1, m, seed=0, episode=e) for e in range(5)]
            for name, m in methods.items()}
    return task, lam, runs, time.perf_counter() - start


def test_gcn_cleaning_beats_baselines(criterion, benchmark_runs):
    _, lam, runs, elapsed = benchmark_runs
    acc = {name: np.array([r.accuracy for r in rs]) for name, rs in runs.items()}
    margin_beta = acc["gcn"] - acc["beta=1"]
    margin_clean = acc["gcn"] - acc["clean-only"]
    wins = int(np.sum((margin_beta >= 0.05) & (margin_clean >= 0.05)))
    ok = (wins >= 4 and margin_beta.mean() >= 0.05 and margin_clean.mean() >= 0.05
          and elapsed < 60)
    criterion(5, "GCN relevance beats beta=1 and clean-only by >= 5 points", ok,
              f"lambda={lam:g}; top-1 gcn {acc['gcn'].mean():.3f}, beta=1 "
              f"{acc['beta=1'].mean():.3f}, clean-only {acc['clean-only'].mean():.3f}; "
              f"{wins}/5 episodes; {elapsed:.1f}s")


def test_gcn_relevance_separates_positives(criterion, benchmark_runs):
    task, lam, runs, _ = benchmark_runs
    reports = [episode_relevance_report(task, r) for r in runs["gcn"]]
    pos = float(np.mean([r.mean_pos for r in reports]))
    neg = float(np.mean([r.mean_neg for r in reports]))
    criterion(6, "GCN relevance of positives minus negatives >= 0.2", pos - neg >= 0.2,
              f"lambda={lam:g}; positives {pos:.3f}, negatives {neg:.3f}")


# ------------------------------------------------------------------ 7. lambda


def test_noisy_relevance_non_increasing_in_lambda(criterion):
    data = generate(standard_benchmark(0))
    task = FewShotTask.from_synth(data)
    c = task.class_ids[0]
    rows = np.concatenate([task.clean_pool[c][:1], task.noisy[c]])
    X = task.X[rows]
    A = normalize_row_stochastic(build_affinity(X, 50))
    means = [float(train_gcn(X, A, 1, GcnTrainConfig(lambda_=lam, seed=0))[1][1:].mean())
             for lam in LAMBDA_GRID]
    ok = all(b <= a + 0.02 for a, b in zip(means, means[1:]))
    criterion(7, "mean noisy relevance non-increasing in lambda", ok,
              ", ".join(f"{lam:g}: {m:.3f}" for lam, m in zip(LAMBDA_GRID, means)))


# --------------------------------------------------------------- 8. classifier


def test_cosine_training_on_separable_set(criterion):
    # labels from a hidden cosine rule, ambiguous points dropped: separable with a margin,
    # but the prototypes alone do not classify every point correctly
    rng = np.random.default_rng(5)
    rule = np.array([[1.0, 0.0, 0.3], [0.0, 1.0, 0.3], [-1.0, -1.0, 0.3]]).T
    X = rng.standard_normal((150, 3))
    cos = (X / np.linalg.norm(X, axis=1, keepdims=True)) @ (rule / np.linalg.norm(rule, axis=0))
    top2 = np.sort(cos, axis=1)[:, -2:]
    keep = top2[:, 1] - top2[:, 0] > 0.15
    X, y = X[keep], np.argmax(cos[keep], axis=1)
    ids = ["a", "b", "c"]
    labels = [ids[i] for i in y]
    rel = np.ones(len(X))
    init = compute_prototypes(X, labels, rel, ids)
    trained = train_cosine(X, labels, rel, TrainConfig(epochs=50, batch_size=16, seed=1), init)
    pred = np.array(ids)[np.argmax(cosine_scores(trained, X), axis=1)]
    acc = float(np.mean(pred == np.array(labels)))
    before = classifier_loss(init, X, labels, rel)
    after = classifier_loss(trained, X, labels, rel)
    zero = train_cosine(X, labels, rel, TrainConfig(epochs=0), init)
    ok = acc == 1.0 and after < before and np.array_equal(zero.W, init.W)
    proto_acc = float(np.mean(np.argmax(cosine_scores(init, X), axis=1) == y))
    criterion(8, "cosine classifier training on a separable K=3 set", ok,
              f"train acc {proto_acc:.3f} -> {acc:.3f}, loss {before:.4f} -> {after:.4f}")


# ------------------------------------------------------------- 9. determinism


def test_cli_outputs_are_reproducible(criterion, tmp_path):
    bench = tmp_path / "bench"
    assert main(["synth", "--quiet", "--out-dir", str(bench), "--seed", "3", "--classes", "5",
                 "--noisy-per-class", "40", "--test-per-class", "30"]) == 0
    data = ["--features", str(bench / "features.fsto"), "--labels", str(bench / "labels.csv")]

    def run(tag):
        d = tmp_path / tag
        d.mkdir()
        codes = [
            main(["clean", "--quiet", "--seed", "5", "--lambda", "0.1", "--out",
                  str(d / "rel.csv")] + data),
            main(["train", "--quiet", "--seed", "5", "--epochs", "5", "--relevance",
                  str(d / "rel.csv"), "--out", str(d / "w.wcls")] + data),
            main(["eval", "--quiet", "--seed", "5", "--k-shots", "1,5", "--episodes", "2",
                  "--test", str(bench / "test.csv"), "--out", str(d / "eval.csv"),
                  "--summary", str(d / "summary.csv")] + data),
        ]
        files = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
        return codes, files

    codes1, out1 = run("first")
    codes2, out2 = run("second")
    ok = codes1 == codes2 == [0, 0, 0] and out1 == out2 and len(out1) == 4
    criterion(9, "clean/train/eval outputs byte-identical across runs", ok,
              f"{len(out1)} files compared")


# ---------------------------------------------------------- 10. format fuzzing


def _base_store_bytes(tmp_path):
    p = tmp_path / "base.fsto"
    write_feature_store(p, FeatureStore(("a", "bb", "c"), np.arange(6.0).reshape(3, 2) + 1))
    return p.read_bytes()


def _invalid_feature_files(data):
    """Mutations of a valid store that must each be rejected."""
    out = [data[:cut] for cut in range(len(data))]  # every truncation
    out += [b"FSTX" + data[4:], b"fsto" + data[4:], b"\0" * len(data)]
    header = lambda v, n, d: data[:4] + struct.pack("<IQI", v, n, d) + data[20:]  # noqa: E731
    out += [header(0, 3, 2), header(2, 3, 2), header(2**31, 3, 2), header(1, 0, 2),
            header(1, 3, 0), header(1, 4, 2), header(1, 2**40, 2), header(1, 3, 3),
            header(1, 3, 2**31)]
    for pos in range(6):
        for bad in (float("nan"), float("inf"), float("-inf")):
            m = bytearray(data)
            m[20 + 4 * pos:24 + 4 * pos] = struct.pack("<f", bad)
            out.append(bytes(m))
    out += [data + tail for tail in (b"\0", b"x", b"\0\0\0\0", b"\1\0\0\0z")]
    ids_at = 20 + 24
    out.append(data[:ids_at] + b"\1\0\0\0a" + b"\1\0\0\0a" + data[ids_at + 11:])  # duplicate
    out.append(data[:ids_at] + b"\0\0\0\0" + data[ids_at + 5:])  # empty id, then misaligned
    out.append(data[:ids_at] + b"\1\0\0\0\xff" + data[ids_at + 5:])  # invalid utf-8
    out.append(data[:ids_at] + b"\xff\xff\xff\xff" + data[ids_at + 4:])  # huge id length
    return out


INVALID_LABELS = [
    b"",
    b"# only a comment\n",
    b"id,class\na,x\n",
    b"id,source\na,clean\n",
    b"class,source\nx,clean\n",
    b"id,class,source\na,x,dirty\n",
    b"id,class,source\na,x,CLEAN\n",
    b"id,class,source\na,x,\n",
    b"id,class,source\n,x,clean\n",
    b"id,class,source\na,,clean\n",
    b"id,class,source\na,x\n",
    b"id,class,source\na,x,clean,extra\n",
    b"id,class,source\na,x,clean\na,x,noisy\n",
    b"id,class,source\na,x,clean\na,x,clean\n",
    b"id,class,source\n\xff\xfe,x,clean\n",
    b"\xef\xbb\xbfid,class,source\na,x,clean\n",
    b"id;class;source\na;x;clean\n",
    b"id,class,source\na,x,clean\nb,y\n",
    b"id\tclass\tsource\na\tx\tclean\n",
    b"id,class,source\na,x,clean\r\nb,x,maybe\r\n",
]


def test_malformed_inputs_exit_with_code_2(criterion, tmp_path, capsys):
    base = _base_store_bytes(tmp_path)
    fixtures = [("features", m) for m in _invalid_feature_files(base)]
    fixtures += [("labels", m) for m in INVALID_LABELS]
    codes, crashes = [], []
    for n, (kind, blob) in enumerate(fixtures):
        p = tmp_path / f"fuzz{n}.{'fsto' if kind == 'features' else 'csv'}"
        p.write_bytes(blob)
        try:
            codes.append(main(["inspect", "--quiet", f"--{kind}", str(p)]))
        except BaseException as exc:  # noqa: BLE001 - any escape is a crash
            crashes.append(f"{kind} #{n}: {type(exc).__name__}")
    # random byte flips may happen to stay valid; they still must not crash
    rng = np.random.default_rng(0)
    random_codes = []
    for n in range(100):
        m = bytearray(base)
        for pos in rng.choice(len(m), size=int(rng.integers(1, 4)), replace=False):
            m[pos] = int(rng.integers(0, 256))
        p = tmp_path / f"flip{n}.fsto"
        p.write_bytes(bytes(m))
        try:
            random_codes.append(main(["inspect", "--quiet", "--features", str(p)]))
        except BaseException as exc:  # noqa: BLE001
            crashes.append(f"flip #{n}: {type(exc).__name__}")
    capsys.readouterr()
    ok = (len(fixtures) >= 100 and not crashes and all(c == 2 for c in codes)
          and set(random_codes) <= {0, 2})
    criterion(10, "malformed feature/label files give exit 2 without crashing", ok,
              f"{len(fixtures)} invalid fixtures, {codes.count(2)} rejected; "
              f"{len(random_codes)} random flips; crashes: {crashes[:3] or 'none'}")
