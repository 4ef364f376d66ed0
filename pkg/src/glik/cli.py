"""Command-line entry point: ``glik <subcommand> [options]``.

Every subcommand writes plot-ready CSV files plus ``manifest.json`` (full
config, seed, SHA-256 of each output, and per-method failures) into
``--out``.  Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bayes_linear import FeatureMap
from .data import DataError, Dataset, four_blobs, ionosphere_like, read_dataset_csv, separable_binary, gaussian_classes
from .errors import ConvergenceError, DomainError, NumericalError, SelectionError, UsageError
from .evalharness import (
    STREAM_METHODS,
    StreamConfig,
    accuracy,
    active_learning_run,
    ece,
    nll,
    records_to_csv,
    steps_to_reach,
    streaming_run,
)
from .gp import landscape, landscape_argmax
from .likelihood_approx import ApproxConfig
from .matching import FAMILIES, MatchMethod, kl_q_to_p, make_density, match
from .mlp import LossKind, SGDConfig, init_mlp, predict_proba_point, train
from .verify import run_all

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MATCH_METHODS = ("laplace", "variational", "moment", "moment-ori")
TOY_METHODS = ("exact", "gauss", "moment-ori", "moment", "laplace", "variational")
GPC_METHODS = ("moment-ori", "moment", "laplace", "variational")

DEFAULTS = {
    "match": {
        "family": "gamma",
        "params": [1.0, 1.0],
        "methods": list(MATCH_METHODS),
        "grid": None,
        "grid_points": 201,
    },
    "toy-classify": {
        "methods": list(TOY_METHODS),
        "alpha_eps": 0.1,
        "n_per_class": 100,
        "blob_std": 0.6,
        "hidden": [64, 64],
        "epochs": 300,
        "lr": 0.02,
        "momentum": 0.9,
        "batch_size": 64,
        "weight_decay": 0.0,
        "region_grid": 41,
    },
    "gpc": {
        "data": None,
        "methods": list(GPC_METHODS),
        "alpha_eps": 0.1,
        "cap": 2000,
        "log_lengthscale": [-2.0, 4.0, 20],
        "log_variance": [-2.0, 6.0, 20],
    },
    "stream": {
        "data": None,
        "methods": list(STREAM_METHODS),
        "alpha_eps": 0.1,
        "cap": 5000,
        "n_test": 1000,
        "feature_dim": 512,
        "cadence": 100,
        "prior_variance": 1.0,
        "n_samples": 1024,
        "adf_samples": 512,
        "adf_damping": 0.5,
        "sgd_lr": 0.05,
        "sgd_momentum": 0.9,
    },
    "active": {
        "data": None,
        "method": "variational",
        "acquisitions": ["entropy", "random"],
        "alpha_eps": 0.1,
        "n_test": 500,
        "init_size": 2,
        "steps": 50,
        "prior_variance": 1.0,
        "n_samples": 1024,
        "thresholds": [0.8, 0.9, 0.95],
    },
    "verify": {},
}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return v


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


class Run:
    """Collects outputs and failures, then writes the manifest."""

    def __init__(self, command, config, seed, out_dir):
        self.command = command
        self.config = config
        self.seed = seed
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs = {}
        self.failures = {}
        self.extra = {}

    def write(self, name, text):
        path = self.out / name
        path.write_text(text)
        self.outputs[name] = "sha256:" + hashlib.sha256(text.encode()).hexdigest()

    def fail(self, method, exc):
        self.failures[method] = f"{type(exc).__name__}: {exc}"

    def finish(self):
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "outputs": dict(sorted(self.outputs.items())),
            "failures": self.failures,
        }
        manifest.update(self.extra)
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _hash_indices(idx):
    return "sha256:" + hashlib.sha256(np.asarray(idx, dtype=np.int64).tobytes()).hexdigest()


def _load(path, fallback):
    return read_dataset_csv(path) if path else fallback()


def _methods(cfg, allowed):
    methods = [m.strip().lower() for m in cfg["methods"]]
    bad = [m for m in methods if m not in allowed]
    if bad or not methods:
        raise UsageError(f"methods: unknown {bad}; expected a subset of {list(allowed)}")
    return methods


def cmd_match(cfg, seed, run: Run):
    density = make_density(cfg["family"], *cfg["params"])
    methods = _methods(cfg, MATCH_METHODS)
    approx = {}
    rows = []
    for m in methods:
        try:
            q = match(density, MatchMethod.parse(m))
        except UsageError as exc:
            run.fail(m, exc)
            continue
        approx[m] = q
        rows.append((m, q.mean, q.variance, kl_q_to_p(q, density)))
    run.write("approximations.csv", _csv_text(["method", "mean", "variance", "kl_q_to_p"], rows))
    lo, hi = cfg["grid"] if cfg["grid"] else density.support_window()
    psi = np.linspace(lo, hi, int(cfg["grid_points"]))
    cols = [psi, density.log_pdf(psi)] + [approx[m].log_pdf(psi) for m in approx]
    run.write("density_grid.csv", _csv_text(["psi", "exact"] + list(approx), zip(*cols)))


def cmd_toy_classify(cfg, seed, run: Run):
    methods = _methods(cfg, TOY_METHODS)
    ss = np.random.SeedSequence(seed)
    train_seed, test_seed, init_seed, sgd_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    tr = four_blobs(cfg["n_per_class"], cfg["blob_std"], train_seed)
    te = four_blobs(cfg["n_per_class"], cfg["blob_std"], test_seed)
    opt = SGDConfig(cfg["lr"], cfg["momentum"], cfg["batch_size"], cfg["weight_decay"])
    g = np.linspace(-4.5, 4.5, int(cfg["region_grid"]))
    grid = np.array([(a, b) for b in g for a in g])
    summary, regions = [], {}
    for m in methods:
        kind = LossKind.parse(m, cfg["alpha_eps"])
        net0 = init_mlp([2, *cfg["hidden"], 4], init_seed)
        try:
            net, hist = train(net0, tr.features, tr.labels, kind, opt, cfg["epochs"], sgd_seed)
        except NumericalError as exc:
            run.fail(m, exc)
            continue
        run.write(f"history_{m}.csv", hist.to_csv())
        p_te = predict_proba_point(net, te.features)
        regions[m] = np.argmax(predict_proba_point(net, grid), axis=1)
        summary.append(
            (m, hist.accuracy[-1], accuracy(p_te, te.labels), nll(p_te, te.labels), ece(p_te, te.labels), len(set(regions[m])))
        )
    header = ["method", "train_accuracy", "test_accuracy", "test_nll", "test_ece", "region_classes"]
    run.write("summary.csv", _csv_text(header, summary))
    run.write("regions.csv", _csv_text(["x0", "x1"] + list(regions), zip(grid[:, 0], grid[:, 1], *regions.values())))


def _axis(bounds, name):
    try:
        lo, hi, n = bounds
        return np.linspace(float(lo), float(hi), int(n))
    except (TypeError, ValueError):
        raise UsageError(f"{name}: expected [low, high, count]") from None


def cmd_gpc(cfg, seed, run: Run):
    methods = _methods(cfg, GPC_METHODS)
    ds = _load(cfg["data"], ionosphere_like)
    ds, idx = ds.subsample(int(cfg["cap"]), seed)
    run.extra["subsample_indices"] = _hash_indices(idx)
    lls = _axis(cfg["log_lengthscale"], "log_lengthscale")
    lvs = _axis(cfg["log_variance"], "log_variance")
    rows, summary = [], []
    for m in methods:
        try:
            values = landscape(ds.features, ds.labels, ds.K, lls, lvs, ApproxConfig(m, cfg["alpha_eps"]))
        except (NumericalError, DomainError) as exc:
            run.fail(m, exc)
            continue
        for i, lv in enumerate(lvs):
            for j, ll in enumerate(lls):
                rows.append((ll, lv, m, values[i, j]))
        if np.any(np.isfinite(values)):
            best_ll, best_lv = landscape_argmax(lls, lvs, values)
            summary.append((m, best_ll, best_lv, float(np.nanmax(values))))
        else:
            run.fail(m, NumericalError("every grid cell failed"))
    run.write("landscape.csv", _csv_text(["log_lengthscale", "log_variance", "method", "log_ml"], rows))
    run.write("summary.csv", _csv_text(["method", "best_log_lengthscale", "best_log_variance", "log_ml"], summary))


def cmd_stream(cfg, seed, run: Run):
    methods = _methods(cfg, STREAM_METHODS)
    ss = np.random.SeedSequence(seed)
    data_seed, split_seed, feat_seed, run_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    n_test = int(cfg["n_test"])
    ds = _load(cfg["data"], lambda: gaussian_classes(int(cfg["cap"]) + n_test, 10, 20, 0.5, data_seed))
    if len(ds) <= n_test:
        raise DataError(f"dataset has {len(ds)} rows; need more than n_test={n_test}")
    tr, te = ds.split(len(ds) - n_test, split_seed)
    tr, idx = tr.subsample(int(cfg["cap"]), split_seed)
    run.extra["subsample_indices"] = _hash_indices(idx)
    fmap = FeatureMap.random_relu(ds.D, int(cfg["feature_dim"]), feat_seed)
    scfg = StreamConfig(
        cfg["alpha_eps"],
        cfg["prior_variance"],
        int(cfg["cadence"]),
        int(cfg["n_samples"]),
        int(cfg["adf_samples"]),
        cfg["adf_damping"],
        cfg["sgd_lr"],
        cfg["sgd_momentum"],
    )
    for m in methods:
        try:
            records = streaming_run(tr, te, m, fmap, scfg, run_seed)
        except (NumericalError, DomainError) as exc:
            run.fail(m, exc)
            continue
        run.write(f"stream_{m.replace('+', '_')}.csv", records_to_csv(records))


def cmd_active(cfg, seed, run: Run):
    ss = np.random.SeedSequence(seed)
    data_seed, split_seed, run_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    n_test = int(cfg["n_test"])
    ds = _load(cfg["data"], lambda: separable_binary(1000 + n_test, rng_seed=data_seed))
    if len(ds) <= n_test:
        raise DataError(f"dataset has {len(ds)} rows; need more than n_test={n_test}")
    pool, test = ds.split(len(ds) - n_test, split_seed)
    summary = []
    for acq in cfg["acquisitions"]:
        try:
            records = active_learning_run(
                pool,
                test,
                int(cfg["init_size"]),
                int(cfg["steps"]),
                cfg["method"],
                run_seed,
                acq,
                alpha_eps=cfg["alpha_eps"],
                prior_variance=cfg["prior_variance"],
                n_samples=int(cfg["n_samples"]),
            )
        except (NumericalError, DomainError) as exc:
            run.fail(acq, exc)
            continue
        run.write(f"active_{acq}.csv", records_to_csv(records))
        for t in cfg["thresholds"]:
            reached = steps_to_reach(records, t)
            summary.append((acq, t, "" if reached is None else reached))
    run.write("steps_to_threshold.csv", _csv_text(["acquisition", "threshold", "steps"], summary))


def cmd_verify(cfg, seed, run: Run):
    checks = run_all()
    rows = [(c.suite, c.name, "pass" if c.passed else "FAIL", c.detail) for c in checks]
    for r in rows:
        print(f"[{r[2]}] {r[0]}: {r[1]} ({r[3]})")
    run.write("verify.csv", _csv_text(["suite", "check", "status", "detail"], rows))
    for c in checks:
        if not c.passed:
            run.failures[f"{c.suite}/{c.name}"] = c.detail
    return EXIT_OK if all(c.passed for c in checks) else EXIT_NUMERIC


COMMANDS = {
    "match": cmd_match,
    "toy-classify": cmd_toy_classify,
    "gpc": cmd_gpc,
    "stream": cmd_stream,
    "active": cmd_active,
    "verify": cmd_verify,
}


def _split_list(text):
    return [t for t in (s.strip() for s in text.split(",")) if t]


def build_parser():
    p = argparse.ArgumentParser(prog="glik", description="Gaussian matching of softmax/logistic likelihoods.")
    p.add_argument("--version", action="version", version=f"glik {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file of config overrides")
        sp.add_argument("--seed", type=int, default=0, help="root seed (unsigned 64-bit)")
        sp.add_argument("--out", default=f"glik-{name}", help="output directory")
        if name == "verify":
            continue
        if name == "active":
            sp.add_argument("--method", help="pseudo-observation method")
        else:
            sp.add_argument("--methods", type=_split_list, help="comma-separated method list")
        if name != "match":
            sp.add_argument("--alpha-eps", type=float, dest="alpha_eps")
        if name in ("gpc", "stream", "active"):
            sp.add_argument("--data", help="CSV dataset: feature columns then an integer label column")
        if name == "match":
            sp.add_argument("--family", choices=sorted(FAMILIES))
            sp.add_argument("--params", type=lambda s: [float(v) for v in _split_list(s)])
            sp.add_argument("--grid", type=lambda s: [float(v) for v in _split_list(s)], help="psi range lo,hi")
    return p


def resolve_config(args) -> dict:
    """Defaults, then the JSON file, then explicit flags."""
    cfg = json.loads(json.dumps(DEFAULTS[args.command]))
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise UsageError(f"config: cannot read {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config: top level must be an object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"config: unknown field(s) {', '.join(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if not 0 <= args.seed < 2**64:
        print("glik: error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = resolve_config(args)
        run = Run(args.command, cfg, args.seed, args.out)
        code = COMMANDS[args.command](cfg, args.seed, run)
        run.finish()
        return EXIT_OK if code is None else code
    except DataError as exc:
        print(f"glik: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, DomainError, KeyError, TypeError) as exc:
        print(f"glik: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ConvergenceError, SelectionError, FloatingPointError) as exc:
        print(f"glik: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
