"""Command-line front end.

    scm-forge gen-data --config cfg.json --out DIR
    scm-forge train    --config cfg.json [--seed N] [--out DIR]
    scm-forge eval     MODEL CSV [--target-cols last] [--has-header]
    scm-forge compare  --config cfg.json [--seed N] [--out DIR]
    scm-forge report   MODEL --mode {size,mc} [--grid-n N]

Configs are single JSON documents; unknown keys are rejected so typos in
hyperparameter names fail loudly. Every command is deterministic given the
config and seed (wall time appears in metrics files but nothing else
depends on it). Exit codes: 0 success, 1 runtime failure, 2 usage/config
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import complexity, dataset as ds, model as mdl
from .activations import NON_DIFFERENTIABLE
from .builder import ALGORITHMS, BuilderConfig, build_baseline, canonical_algorithm
from .numerics import rmse

METRICS_SCHEMA_VERSION = 1

_ALGORITHM_LABELS = {
    "scn": "SCN",
    "deepscn": "DeepSCN",
    "scm": "SCM",
    "irvfl": "IRVFL",
    "dirvfl-i": "DIRVFL-I",
    "dirvfl-ii": "DIRVFL-II",
}


class ConfigError(ValueError):
    """Configuration problem; maps to exit code 2."""


def _check_keys(raw: dict, allowed, context: str):
    unknown = set(raw) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {context}: {sorted(unknown)}")


def _load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw


# ---------------------------------------------------------------------------
# Data preparation
# ---------------------------------------------------------------------------


def _prepare_data(cfg: dict, seed: int):
    """Load or generate data, normalize to [0,1], and split.

    Returns (train, val, test, norm, es_source) where ``val`` is the split
    driving early stopping; when no validation fraction is configured the
    test split takes that role, mirroring the reference protocol, and
    ``es_source`` records which one was used.
    """
    spec = cfg.get("dataset")
    if not isinstance(spec, dict):
        raise ConfigError("config requires a 'dataset' object")
    split_cfg = cfg.get("split", {})
    _check_keys(split_cfg, {"train", "val", "test"}, "'split'")
    f_val = float(split_cfg.get("val", 0.0))

    if "generator" in spec:
        gen = spec["generator"].lower()
        if gen == "rdb7":
            _check_keys(spec, {"generator", "n"}, "'dataset'")
            full = ds.gen_rdb7(int(spec.get("n", ds.RDB7_DEFAULT_N)), seed)
            full, norm = ds.normalize_minmax(full)
            f_train = float(split_cfg.get("train", 0.9))
            f_test = float(split_cfg.get("test", round(1.0 - f_train - f_val, 12)))
            train, val, test = ds.split(full, (f_train, f_val, f_test), seed)
        elif gen == "rastrigin":
            _check_keys(spec, {"generator", "n_dims", "n_train", "n_test"}, "'dataset'")
            train_raw, test_raw = ds.gen_rastrigin(
                int(spec.get("n_dims", ds.RASTRIGIN_DEFAULT_DIMS)),
                int(spec.get("n_train", ds.RASTRIGIN_DEFAULT_TRAIN)),
                int(spec.get("n_test", ds.RASTRIGIN_DEFAULT_TEST)),
                seed,
            )
            combined = ds.Dataset(
                np.vstack([train_raw.inputs, test_raw.inputs]),
                np.vstack([train_raw.targets, test_raw.targets]),
                train_raw.feature_names,
                train_raw.target_names,
            )
            combined, norm = ds.normalize_minmax(combined)
            n_train = train_raw.n_rows
            train = combined.take(np.arange(n_train))
            test = combined.take(np.arange(n_train, combined.n_rows))
            if f_val > 0:
                train, val, _ = ds.split(train, (1.0 - f_val, f_val, 0.0), seed)
            else:
                val = train.take(np.arange(0))
        else:
            raise ConfigError(f"unknown generator {spec['generator']!r}")
    elif "path" in spec:
        _check_keys(spec, {"path", "target_cols", "has_header"}, "'dataset'")
        try:
            full = ds.load_csv(
                spec["path"], spec.get("target_cols", "last"), bool(spec.get("has_header", False))
            )
        except FileNotFoundError as exc:
            raise ConfigError(str(exc)) from exc
        full, norm = ds.normalize_minmax(full)
        f_train = float(split_cfg.get("train", 0.9))
        f_test = float(split_cfg.get("test", round(1.0 - f_train - f_val, 12)))
        train, val, test = ds.split(full, (f_train, f_val, f_test), seed)
    else:
        raise ConfigError("'dataset' needs either 'generator' or 'path'")

    if val.n_rows > 0:
        es_source = "val"
    else:
        val, es_source = test, "test"
    if train.n_rows == 0 or test.n_rows == 0:
        raise ConfigError("train and test splits must be non-empty")
    return train, val, test, norm, es_source


_TRAIN_KEYS = {"dataset", "split", "seed", "builder", "algorithm", "workers", "mechanism", "out_dir"}


def _builder_config(cfg: dict, seed: int) -> BuilderConfig:
    raw = cfg.get("builder")
    if not isinstance(raw, dict):
        raise ConfigError("config requires a 'builder' object")
    if "seed" in raw:
        raise ConfigError("'builder.seed' is not allowed; set the top-level 'seed'")
    try:
        return BuilderConfig.from_dict({**raw, "seed": seed})
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad builder config: {exc}") from exc


def _resolve_mechanism(cfg: dict):
    name = cfg.get("mechanism", "linear")
    if name == "linear":
        return None
    fn = mdl.resolve_mechanism(name)
    if fn is None:
        raise ConfigError(f"mechanism {name!r} is not registered")
    return mdl.ExternalMechanism(name, fn)


def _run_one(algorithm, train, val, test, norm, cfg_b, mechanism, workers, es_source):
    model, trace = build_baseline(
        algorithm, train, val, cfg_b,
        mechanism=mechanism, norm=norm, workers=workers, early_stop_source=es_source,
    )
    test_pred = mdl.forward(model, test.inputs)
    metrics = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "algorithm": algorithm,
        "seed": cfg_b.seed,
        "train_rmse": trace.final_train_rmse(),
        "val_rmse": trace.nodes[-1].val_rmse if trace.nodes else trace.initial_val_rmse,
        "test_rmse": rmse(test_pred, test.targets),
        "nodes_per_layer": list(model.layer_widths),
        "stop_reason": trace.stop_reason,
        "early_stop_source": trace.early_stop_source,
        "rollbacks": trace.rollback_count,
    }
    return model, trace, metrics


def _write_trace_csv(trace, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "node", "train_rmse", "val_rmse", "lambda", "r_used"])
        for n in trace.nodes:
            w.writerow([n.layer, n.node, repr(n.train_rmse), repr(n.val_rmse), repr(n.lam), repr(n.r_used)])


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("out_dir") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, {"generator", "n", "n_dims", "n_train", "n_test", "seed"}, "gen-data config")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args, cfg)
    gen = cfg.get("generator", "").lower()
    if gen == "rdb7":
        n = int(cfg.get("n", ds.RDB7_DEFAULT_N))
        data = ds.gen_rdb7(n, seed)
        path = out / "rdb7.csv"
        ds.write_csv(data, path, f"generator=rdb7 n={n} seed={seed} prng={ds.PRNG_NAME} version=1")
        print(f"wrote {path} ({data.n_rows} rows)")
    elif gen == "rastrigin":
        n_dims = int(cfg.get("n_dims", ds.RASTRIGIN_DEFAULT_DIMS))
        n_train = int(cfg.get("n_train", ds.RASTRIGIN_DEFAULT_TRAIN))
        n_test = int(cfg.get("n_test", ds.RASTRIGIN_DEFAULT_TEST))
        train, test = ds.gen_rastrigin(n_dims, n_train, n_test, seed)
        for name, data in (("rastrigin_train.csv", train), ("rastrigin_test.csv", test)):
            path = out / name
            ds.write_csv(
                data, path,
                f"generator=rastrigin n_dims={n_dims} n_train={n_train} n_test={n_test} "
                f"seed={seed} prng={ds.PRNG_NAME} version=1",
            )
            print(f"wrote {path} ({data.n_rows} rows)")
    else:
        raise ConfigError("gen-data config requires 'generator': 'rdb7' or 'rastrigin'")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _TRAIN_KEYS, "train config")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    algorithm = canonical_algorithm(cfg.get("algorithm", "scm"))
    workers = int(cfg.get("workers", 1))
    cfg_b = _builder_config(cfg, seed)
    mechanism = _resolve_mechanism(cfg)
    train, val, test, norm, es_source = _prepare_data(cfg, seed)
    out = _out_dir(args, cfg)

    started = time.perf_counter()
    model, trace, metrics = _run_one(
        algorithm, train, val, test, norm, cfg_b, mechanism, workers, es_source
    )
    metrics["wall_time_s"] = time.perf_counter() - started

    model_path = out / "model.scm"
    mdl.serialize(model, model_path)
    _write_trace_csv(trace, out / "trace.csv")
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(
        f"{_ALGORITHM_LABELS[algorithm]} seed={seed}: train_rmse={metrics['train_rmse']:.6g} "
        f"test_rmse={metrics['test_rmse']:.6g} nodes={metrics['nodes_per_layer']}"
    )
    print(f"wrote {model_path}, trace.csv, metrics.json")
    return 0


def cmd_eval(args) -> int:
    model = mdl.deserialize(args.model)
    data = ds.load_csv(args.data, args.target_cols, args.has_header)
    if model.norm is not None:
        scaled = ds.Dataset(
            model.norm.scale_inputs(data.inputs),
            model.norm.scale_targets(data.targets),
            data.feature_names,
            data.target_names,
        )
    else:
        scaled = data
    pred = mdl.forward(model, scaled.inputs)
    metrics = {
        "schema_version": METRICS_SCHEMA_VERSION,
        "rows": data.n_rows,
        "rmse_normalized": rmse(pred, scaled.targets),
    }
    if model.norm is not None:
        metrics["rmse_raw"] = rmse(model.norm.unscale_targets(pred), data.targets)
    text = json.dumps(metrics, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _TRAIN_KEYS | {"algorithms", "trials", "overrides"}, "compare config")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    trials = int(cfg.get("trials", 1))
    if trials < 1:
        raise ConfigError("'trials' must be >= 1")
    algorithms = [canonical_algorithm(a) for a in cfg.get("algorithms", list(ALGORITHMS))]
    overrides = cfg.get("overrides", {})
    _check_keys(overrides, set(ALGORITHMS), "'overrides'")
    workers = int(cfg.get("workers", 1))
    mechanism = _resolve_mechanism(cfg)
    out = _out_dir(args, cfg)

    def run_trial(algorithm: str, trial: int):
        # Per-trial seed = seed + trial index; data, split and search all
        # derive from it, so trials are independent replicates.
        trial_seed = seed + trial
        merged = dict(cfg)
        if algorithm in overrides:
            merged = {**cfg, "builder": {**cfg.get("builder", {}), **overrides[algorithm]}}
        cfg_b = _builder_config(merged, trial_seed)
        train, val, test, norm, es_source = _prepare_data(cfg, trial_seed)
        _, _, metrics = _run_one(
            algorithm, train, val, test, norm, cfg_b, mechanism, 1, es_source
        )
        return metrics

    jobs = [(alg, t) for alg in algorithms for t in range(trials)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda j: run_trial(*j), jobs))
    else:
        results = [run_trial(*j) for j in jobs]

    rows = []
    for i, alg in enumerate(algorithms):
        chunk = results[i * trials:(i + 1) * trials]
        tr = np.array([r["train_rmse"] for r in chunk])
        te = np.array([r["test_rmse"] for r in chunk])
        rows.append({
            "algorithm": _ALGORITHM_LABELS[alg],
            "train_rmse_mean": float(tr.mean()), "train_rmse_std": float(tr.std()),
            "test_rmse_mean": float(te.mean()), "test_rmse_std": float(te.std()),
        })

    csv_path = out / "table.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["algorithm", "train_rmse_mean", "train_rmse_std", "test_rmse_mean", "test_rmse_std"])
        for r in rows:
            w.writerow([r["algorithm"], repr(r["train_rmse_mean"]), repr(r["train_rmse_std"]),
                        repr(r["test_rmse_mean"]), repr(r["test_rmse_std"])])

    lines = [f"{'Algorithm':<12} {'Training RMSE':>24} {'Testing RMSE':>24}"]
    for r in rows:
        lines.append(
            f"{r['algorithm']:<12} "
            f"{r['train_rmse_mean']:.5f} ± {r['train_rmse_std']:.5f}".ljust(38)
            + f"{r['test_rmse_mean']:.5f} ± {r['test_rmse_std']:.5f}"
        )
    table = "\n".join(lines)
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_report(args) -> int:
    model = mdl.deserialize(args.model)
    if args.mode == "size":
        rep = mdl.storage_report(model)
        print(f"weights        {rep.weights}")
        print(f"sign_bits      {rep.sign_bits}")
        print(f"upsilon_bits   {rep.upsilon_bits}")
        print(f"real64_bits    {rep.real64_bits}")
        print(f"reduction      {rep.reduction_pct:.2f}%")
        return 0
    # mc mode
    if model.n_outputs != 1:
        raise ConfigError("mc report supports single-output models only")
    try:
        d = model.input_dim
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if d > complexity.MAX_DIMS:
        raise ConfigError(f"mc report supports up to {complexity.MAX_DIMS} inputs, model has {d}")
    grid_n = args.grid_n or {1: 10001, 2: 201, 3: 61}[d]
    box = complexity.Box(tuple((0.0, 1.0) for _ in range(d)))

    def s_fn(points):
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if pts.shape[1] != d:
            pts = pts.reshape(-1, d)
        return mdl.stochastic_part(model, pts)[:, 0]

    est = complexity.estimate_mc_nd(s_fn, box, grid_n)
    non_diff = sorted({l.activation.name for l in model.layers} & NON_DIFFERENTIABLE)
    print(f"extrema_count       {est.extrema_count}")
    print(f"variation_integral  {est.variation_integral:.6g}")
    print(f"mc                  {est.mc:.6g}")
    print(f"grid_points_per_dim {est.grid_points_per_dim}")
    print(f"tolerance           {est.tolerance:.6g}")
    if non_diff:
        print(f"warning: non-differentiable activation(s) {non_diff}; "
              "the complexity measure assumes differentiability")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scm-forge", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic benchmark dataset as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one model per the config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model on a CSV dataset")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--target-cols", default="last")
    p.add_argument("--has-header", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="run the algorithm suite over repeated trials")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="storage or model-complexity report for a model")
    p.add_argument("model")
    p.add_argument("--mode", choices=("size", "mc"), required=True)
    p.add_argument("--grid-n", type=int)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures -> exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
