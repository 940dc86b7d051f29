"""Command-line driver: ``relclean <subcommand> [options]``.

Exit status: 0 on success, 2 for invalid input or configuration, 3 for
numerical failures. ``--json`` prints a machine-readable summary on stdout;
progress messages go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import io as rio
from .classifier import TrainConfig, concat_all_classes, cosine_scores, rank_classes
from .cleaners import CLEANERS, GcnTrainConfig, LpConfig
from .eval import (
    FewShotTask,
    Method,
    episode_relevance_report,
    evaluate,
    run_episode,
    sweep_beta,
    sweep_lambda,
    write_histogram_csv,
    write_report_csv,
    write_summary_csv,
)
from .exceptions import ContractError, FormatError, NumericalError
from .graph import build_affinity, write_edge_csv
from .pipeline import clean_all, fit_classifier
from .synth import SynthSpec, generate

log = logging.getLogger("relclean")

SEED_ENV = "RELCLEAN_SEED"
DEFAULT_LAMBDA_GRID = (0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0)
DEFAULT_K_SHOTS = (1, 2, 5, 10, 20)
COMMANDS = ("clean", "proto", "train", "predict", "eval", "sweep", "synth", "inspect")

CONFIG_SECTIONS = {
    "paths": {"features", "labels", "relevance", "test", "flags", "weights", "out"},
    "cleaner": {"method", "lambda", "beta", "k_nn"},
    "gcn": {"iterations", "lr", "dropout", "hidden"},
    "lp": {"alpha", "tol", "max_iter"},
    "train": {"epochs", "batch_size", "lr_start", "lr_end", "floor", "scale"},
    "episode": {"k_shots", "episodes", "top_k", "classifier"},
}
CONFIG_TOP = {"seed", "jobs"}


@dataclass
class PipelineConfig:
    """Merged settings: built-in defaults < JSON config file < command-line flags."""

    paths: dict = field(default_factory=dict)
    method: str = "gcn"
    lam: float = 1.0
    beta: float = 1.0
    k_nn: int = 50
    gcn: GcnTrainConfig = field(default_factory=GcnTrainConfig)
    lp: LpConfig = field(default_factory=LpConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scale: float = 10.0
    k_shots: tuple = DEFAULT_K_SHOTS
    episodes: int = 5
    top_k: int = 1
    classifier: str = "proto"
    seed: int = 0
    jobs: int = 1

    def method_spec(self, name=None):
        return Method(name or self.method, self.lam, self.beta, self.k_nn,
                      GcnTrainConfig(self.lam, self.gcn.iterations, self.gcn.lr, self.gcn.dropout,
                                     self.gcn.hidden),
                      self.lp, self.classifier, self.train, self.scale)

    def path(self, name, required=True):
        p = self.paths.get(name)
        if p is None and required:
            raise UsageError(f"--{name.replace('_', '-')} is required")
        return p


class UsageError(Exception):
    pass


def load_config(path):
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path, f"line {exc.lineno}") from None
    if not isinstance(cfg, dict):
        raise FormatError("config must be a JSON object", path)
    for key, value in cfg.items():
        if key in CONFIG_TOP:
            continue
        if key not in CONFIG_SECTIONS:
            raise FormatError(f"unknown config section {key!r}", path)
        if not isinstance(value, dict):
            raise FormatError(f"config section {key!r} must be an object", path)
        unknown = set(value) - CONFIG_SECTIONS[key]
        if unknown:
            raise FormatError(f"unknown keys in section {key!r}: {sorted(unknown)}", path)
    return cfg


def _env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def build_config(args):
    file_cfg = load_config(args.config) if getattr(args, "config", None) else {}

    def pick(flag, section, key, default):
        v = getattr(args, flag, None)
        if v is not None:
            return v
        return file_cfg.get(section, {}).get(key, default) if section else file_cfg.get(key, default)

    paths = dict(file_cfg.get("paths", {}))
    for name in CONFIG_SECTIONS["paths"]:
        v = getattr(args, name, None)
        if v is not None:
            paths[name] = v

    seed = getattr(args, "seed", None)
    if seed is None:
        seed = _env_seed()
    if seed is None:
        seed = file_cfg.get("seed", 0)

    method = pick("method", "cleaner", "method", "gcn")
    if method not in CLEANERS:
        raise UsageError(f"unknown method {method!r}; choose from {', '.join(CLEANERS)}")
    classifier = pick("classifier", "episode", "classifier", "proto")
    if classifier not in ("proto", "cosine"):
        raise UsageError(f"unknown classifier {classifier!r}")
    lam = float(pick("lam", "cleaner", "lambda", 1.0))
    gcn = GcnTrainConfig(
        lambda_=lam,
        iterations=int(pick("iterations", "gcn", "iterations", 100)),
        lr=float(pick("gcn_lr", "gcn", "lr", 0.1)),
        dropout=float(pick("dropout", "gcn", "dropout", 0.5)),
        hidden=int(pick("hidden", "gcn", "hidden", 16)),
    )
    lp = LpConfig(float(pick("alpha", "lp", "alpha", 0.9)), float(pick("lp_tol", "lp", "tol", 1e-10)),
                  int(pick("lp_max_iter", "lp", "max_iter", 1000)))
    train = TrainConfig(
        epochs=int(pick("epochs", "train", "epochs", 30)),
        batch_size=int(pick("batch_size", "train", "batch_size", 64)),
        lr_start=float(pick("lr_start", "train", "lr_start", 0.1)),
        lr_end=float(pick("lr_end", "train", "lr_end", 0.001)),
        floor=float(pick("floor", "train", "floor", 0.1)),
        seed=int(seed),
    )
    return PipelineConfig(
        paths=paths,
        method=method,
        lam=lam,
        beta=float(pick("beta", "cleaner", "beta", 1.0)),
        k_nn=int(pick("k_nn", "cleaner", "k_nn", 50)),
        gcn=gcn,
        lp=lp,
        train=train,
        scale=float(pick("scale", "train", "scale", 10.0)),
        k_shots=tuple(int(k) for k in pick("k_shots", "episode", "k_shots", DEFAULT_K_SHOTS)),
        episodes=int(pick("episodes", "episode", "episodes", 5)),
        top_k=int(pick("top_k", "episode", "top_k", 1)),
        classifier=classifier,
        seed=int(seed),
        jobs=int(pick("jobs", None, "jobs", os.cpu_count() or 1)),
    )


# ---------------------------------------------------------------- subcommands


def _comments(cfg):
    return {"seed": cfg.seed}


def cmd_synth(cfg, args):
    kw = {f.name: getattr(args, f.name) for f in fields(SynthSpec)
          if getattr(args, f.name, None) is not None and f.name != "seed"}
    data = generate(SynthSpec(seed=cfg.seed, **kw))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rio.write_feature_store(out / "features.fsto", data.store)
    rio.write_labels(out / "labels.csv", data.labels, _comments(cfg))
    rio.write_flags(out / "flags.csv", data.flag_rows(), _comments(cfg))
    rio.write_test_labels(out / "test.csv", data.test, _comments(cfg))
    log.info("wrote %d examples over %d classes to %s", data.store.n, data.spec.n_classes, out)
    return {"command": "synth", "examples": data.store.n, "classes": data.spec.n_classes,
            "dim": data.store.dim, "seed": cfg.seed}


def _load_store_labels(cfg):
    store = rio.read_feature_store(cfg.path("features"))
    labels = rio.read_labels(cfg.path("labels"))
    return store, labels


def cmd_clean(cfg, args):
    store, labels = _load_store_labels(cfg)
    out = cfg.path("out")
    method = cfg.method_spec()
    log.info("cleaning %d classes with %s", len(labels.classes()), method.name)
    maps = clean_all(store, labels, method, cfg.seed, cfg.jobs)
    rio.write_relevance(out, maps, _comments(cfg))
    if args.edges_dir:
        edir = Path(args.edges_dir)
        edir.mkdir(parents=True, exist_ok=True)
        for m in maps:
            g = build_affinity(store.rows(m.ids), cfg.k_nn, m.ids)
            write_edge_csv(edir / f"{m.class_id}.edges.csv", g, m.ids)
    summary = {}
    for m in maps:
        noisy = m.relevance[m.noisy_mask]
        summary[m.class_id] = {
            "clean": int((~m.noisy_mask).sum()),
            "noisy": int(noisy.size),
            "mean_noisy_relevance": round(float(noisy.mean()), 6) if noisy.size else None,
        }
    return {"command": "clean", "method": method.name, "param": method.param, "seed": cfg.seed,
            "classes": summary}


def _relevance_maps(cfg, store, labels):
    rel_path = cfg.path("relevance", required=False)
    if rel_path:
        return rio.read_relevance(rel_path)
    # unit relevance for every labelled example
    from .cleaners import RelevanceMap

    maps = []
    for c in labels.classes():
        ids = labels.ids_for(c, "clean") + labels.ids_for(c, "noisy")
        k = len(labels.ids_for(c, "clean"))
        maps.append(RelevanceMap.from_clean_first(c, ids, np.ones(len(ids)), k))
    return maps


def cmd_proto(cfg, args):
    store, labels = _load_store_labels(cfg)
    maps = _relevance_maps(cfg, store, labels)
    weights = fit_classifier(store, maps, cfg.scale)
    rio.write_weights(cfg.path("out"), weights)
    return {"command": "proto", "classes": weights.n_classes, "dim": weights.dim,
            "scale": weights.s}


def cmd_train(cfg, args):
    store, labels = _load_store_labels(cfg)
    maps = _relevance_maps(cfg, store, labels)
    init = rio.read_weights(cfg.paths["weights"]) if cfg.paths.get("weights") else None
    weights = fit_classifier(store, maps, cfg.scale, cfg.train, init)
    rio.write_weights(cfg.path("out"), weights)
    return {"command": "train", "classes": weights.n_classes, "dim": weights.dim,
            "epochs": cfg.train.epochs, "batch_size": cfg.train.batch_size, "seed": cfg.seed}


def cmd_predict(cfg, args):
    weights = rio.read_weights(cfg.path("weights"))
    if args.base_weights:
        weights = concat_all_classes(rio.read_weights(args.base_weights), weights)
    store = rio.read_feature_store(cfg.path("features"))
    test_path = cfg.path("test", required=False)
    truth = rio.read_test_labels(test_path) if test_path else None
    ids = [i for i, _ in truth] if truth else list(store.ids)
    top_k = min(cfg.top_k, weights.n_classes)
    scores = cosine_scores(weights, store.rows(ids))
    order = rank_classes(scores)[:, :top_k]
    rows = []
    for r, i in enumerate(ids):
        for rank, j in enumerate(order[r], start=1):
            rows.append((i, rank, weights.class_ids[j], f"{scores[r, j]:.6f}"))
    rio._write_csv(cfg.path("out"), ["id", "rank", "class", "score"], rows, _comments(cfg))
    summary = {"command": "predict", "examples": len(ids), "top_k": top_k}
    if truth:
        cls = np.array(weights.class_ids, dtype=object)
        hit = [t in set(cls[order[r]]) for r, (_, t) in enumerate(truth)]
        summary["accuracy"] = round(float(np.mean(hit)), 6)
    return summary


def _task(cfg):
    store, labels = _load_store_labels(cfg)
    test = rio.read_test_labels(cfg.path("test"))
    flags_path = cfg.path("flags", required=False)
    flags = rio.read_flags(flags_path) if flags_path else None
    return FewShotTask.from_store(store, labels, test, flags)


def cmd_eval(cfg, args):
    task = _task(cfg)
    method = cfg.method_spec()
    reports = []
    for k in cfg.k_shots:
        log.info("evaluating %s at k=%d over %d episodes", method.name, k, cfg.episodes)
        reports.append(evaluate(task, method, k, cfg.episodes, cfg.seed, cfg.top_k, cfg.jobs))
    out = cfg.path("out", required=False)
    if out:
        write_report_csv(out, reports, _comments(cfg))
    if args.summary:
        write_summary_csv(args.summary, reports, _comments(cfg))
    result = {
        "command": "eval", "method": method.name, "param": method.param,
        "classifier": method.classifier, "seed": cfg.seed, "top_k": cfg.top_k,
        "results": [{"k_shots": r.k_shots, "mean": round(r.mean, 6), "std": round(r.std, 6),
                     "accuracies": [round(a, 6) for a in r.accuracies]} for r in reports],
    }
    if task.flags:
        ep = run_episode(task, cfg.k_shots[0], method, cfg.seed, 0, cfg.top_k)
        rep = episode_relevance_report(task, ep)
        result["relevance"] = {
            "k_shots": cfg.k_shots[0],
            "mean_positive": None if np.isnan(rep.mean_pos) else round(rep.mean_pos, 6),
            "mean_negative": None if np.isnan(rep.mean_neg) else round(rep.mean_neg, 6),
            "noise_ratio": None if np.isnan(rep.noise_ratio) else round(rep.noise_ratio, 6),
        }
        if args.histogram:
            noisy = np.concatenate([m.relevance[m.noisy_mask] for m in ep.relevance.values()])
            write_histogram_csv(args.histogram, noisy, comments=_comments(cfg))
    return result


def cmd_sweep(cfg, args):
    task = _task(cfg)
    grid = args.grid or (DEFAULT_LAMBDA_GRID if args.param == "lambda" else (0.0, 0.25, 0.5, 0.75, 1.0))
    method = cfg.method_spec("gcn" if args.param == "lambda" else "beta")
    fn = sweep_lambda if args.param == "lambda" else sweep_beta
    res = fn(task, grid, cfg.k_shots, cfg.episodes, cfg.seed, cfg.top_k, method, cfg.jobs)
    out = cfg.path("out", required=False)
    if out:
        write_report_csv(out, res.reports, _comments(cfg))
    if args.summary:
        write_summary_csv(args.summary, res.reports, _comments(cfg))
    return {
        "command": "sweep", "param": res.param, "seed": cfg.seed,
        "best": {str(k): v for k, v in res.best.items()},
        "table": [{"value": r.param, "k_shots": r.k_shots, "mean": round(r.mean, 6),
                   "std": round(r.std, 6), "episodes": len(r.accuracies)} for r in res.reports],
    }


def cmd_inspect(cfg, args):
    info = {"command": "inspect"}
    if cfg.paths.get("features"):
        store = rio.read_feature_store(cfg.paths["features"])
        norms = np.linalg.norm(store.features, axis=1)
        info["features"] = {"n": store.n, "dim": store.dim,
                            "min_norm": round(float(norms.min()), 6),
                            "max_norm": round(float(norms.max()), 6)}
    if cfg.paths.get("labels"):
        labels = rio.read_labels(cfg.paths["labels"])
        info["labels"] = {c: {"clean": len(labels.ids_for(c, "clean")),
                              "noisy": len(labels.ids_for(c, "noisy"))}
                          for c in labels.classes()}
    if cfg.paths.get("relevance"):
        maps = rio.read_relevance(cfg.paths["relevance"])
        info["relevance"] = {m.class_id: len(m.ids) for m in maps}
    if cfg.paths.get("weights"):
        w = rio.read_weights(cfg.paths["weights"])
        info["weights"] = {"classes": w.n_classes, "dim": w.dim, "scale": w.s}
    if len(info) == 1:
        raise UsageError("inspect needs at least one of --features, --labels, --relevance, --weights")
    return info


HANDLERS = {
    "synth": cmd_synth, "clean": cmd_clean, "proto": cmd_proto, "train": cmd_train,
    "predict": cmd_predict, "eval": cmd_eval, "sweep": cmd_sweep, "inspect": cmd_inspect,
}


# -------------------------------------------------------------------- parser


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int,
                        help=f"random seed (fallback: ${SEED_ENV}, then config, then 0)")
    common.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")
    common.add_argument("--jobs", type=int, help="worker threads (default: number of processors)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--features", help="feature store (.fsto)")
    data.add_argument("--labels", help="label CSV with header id,class,source")

    cleaner = argparse.ArgumentParser(add_help=False)
    cleaner.add_argument("--method", help=f"cleaner: {', '.join(CLEANERS)} (default gcn)")
    cleaner.add_argument("--lambda", dest="lam", type=float,
                         help="weight of the noisy term in the GCN/MLP loss (default 1.0)")
    cleaner.add_argument("--beta", type=float, help="relevance for the beta baseline (default 1.0)")
    cleaner.add_argument("--k-nn", dest="k_nn", type=int,
                         help="reciprocal nearest neighbours per node (default 50)")
    cleaner.add_argument("--iterations", type=int, help="GCN Adam iterations (default 100)")
    cleaner.add_argument("--gcn-lr", dest="gcn_lr", type=float, help="GCN learning rate (default 0.1)")
    cleaner.add_argument("--dropout", type=float, help="GCN hidden-layer dropout (default 0.5)")
    cleaner.add_argument("--hidden", type=int, help="GCN hidden units (default 16)")
    cleaner.add_argument("--alpha", type=float, help="label propagation alpha (default 0.9)")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--epochs", type=int, help="cosine-classifier epochs (default 30)")
    training.add_argument("--batch-size", dest="batch_size", type=int, help="batch size (default 64)")
    training.add_argument("--lr-start", dest="lr_start", type=float, help="initial lr (default 0.1)")
    training.add_argument("--lr-end", dest="lr_end", type=float, help="final lr (default 0.001)")
    training.add_argument("--floor", type=float,
                          help="ignore examples with relevance below this (default 0.1)")
    training.add_argument("--scale", type=float, help="logit scale s (default 10)")

    episode = argparse.ArgumentParser(add_help=False)
    episode.add_argument("--test", help="test CSV with header id,class")
    episode.add_argument("--flags", help="ground-truth CSV id,class,truth (optional)")
    episode.add_argument("--k-shots", dest="k_shots", type=_ints,
                         help="comma-separated clean examples per class (default 1,2,5,10,20)")
    episode.add_argument("--episodes", type=int, help="episodes per setting (default 5)")
    episode.add_argument("--top-k", dest="top_k", type=int, help="top-k accuracy (default 1)")
    episode.add_argument("--classifier", help="proto or cosine (default proto)")
    episode.add_argument("--summary", help="summary CSV method,k_shots,param,mean,std")

    parser = argparse.ArgumentParser(prog="relclean", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--classes", dest="n_classes", type=int, help="number of classes (default 10)")
    p.add_argument("--dim", type=int, help="feature dimension (default 32)")
    p.add_argument("--clean-per-class", dest="clean_per_class", type=int, help="default 20")
    p.add_argument("--noisy-per-class", dest="noisy_per_class", type=int, help="default 100")
    p.add_argument("--noise-ratio", dest="noise_ratio", type=float, help="default 0.5")
    p.add_argument("--test-per-class", dest="test_per_class", type=int, help="default 100")
    p.add_argument("--concentration", type=float, help="intra-class concentration (default 0.5)")
    p.add_argument("--confusers", type=int, help="classes negatives are drawn from (default 2)")

    p = sub.add_parser("clean", parents=[common, data, cleaner], help="compute relevance per class")
    p.add_argument("--out", help="relevance CSV to write")
    p.add_argument("--edges-dir", help="also dump each class' affinity edges as CSV here")

    p = sub.add_parser("proto", parents=[common, data], help="relevance-weighted prototypes")
    p.add_argument("--relevance", help="relevance CSV (default: unit relevance)")
    p.add_argument("--scale", type=float, help="logit scale s stored with the weights (default 10)")
    p.add_argument("--out", help="weights file to write")

    p = sub.add_parser("train", parents=[common, data, training], help="train a cosine classifier")
    p.add_argument("--relevance", help="relevance CSV (default: unit relevance)")
    p.add_argument("--weights", help="initial weights (default: prototypes)")
    p.add_argument("--out", help="weights file to write")

    p = sub.add_parser("predict", parents=[common], help="rank classes for examples")
    p.add_argument("--weights", help="weights file")
    p.add_argument("--base-weights", dest="base_weights", help="base-class weights to prepend")
    p.add_argument("--features", help="feature store")
    p.add_argument("--test", help="optional id,class CSV restricting and scoring the examples")
    p.add_argument("--top-k", dest="top_k", type=int, help="classes per example (default 1)")
    p.add_argument("--out", help="predictions CSV id,rank,class,score")

    p = sub.add_parser("eval", parents=[common, data, cleaner, training, episode],
                       help="episodic few-shot evaluation")
    p.add_argument("--out", help="per-episode report CSV")
    p.add_argument("--histogram", help="cumulative relevance histogram CSV (needs --flags)")

    p = sub.add_parser("sweep", parents=[common, data, cleaner, training, episode],
                       help="select lambda (per k) or beta (shared) on validation data")
    p.add_argument("--param", choices=("lambda", "beta"), default="lambda")
    p.add_argument("--grid", type=_floats,
                   help="comma-separated values (default lambda 0.001,0.01,0.05,0.1,0.5,1,2,5; "
                        "beta 0,.25,.5,.75,1)")
    p.add_argument("--out", help="per-episode table CSV")

    p = sub.add_parser("inspect", parents=[common], help="validate and summarize files")
    for name in ("features", "labels", "relevance", "weights"):
        p.add_argument(f"--{name}")
    for sp in sub.choices.values():
        sp.set_defaults(usage=sp.format_usage())
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(stream=sys.stderr, format="relclean: %(message)s")
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        cfg = build_config(args)
        result = HANDLERS[args.command](cfg, args)
    except UsageError as exc:
        sys.stderr.write(args.usage)
        print(f"relclean {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"relclean: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (FormatError, ContractError, OSError, ValueError) as exc:
        print(f"relclean: error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
