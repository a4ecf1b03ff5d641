"""Command-line interface: gen, mine, trials, plotdata, and eval subcommands.

Every command is deterministic given its flags and seeds; wall-clock timing
only ever appears on the console, never inside output files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import data, pipeline, stl
from .config import ConfigFileError, ExperimentConfig, load_config
from .optimize import ALGORITHMS

ENV_CONFIG = "STLMINE_CONFIG"

ABLATIONS = ("telex", "linear", "no-trivial", "no-intervals")

_TABLE_COLUMNS = (
    ("Error rate (noncf)", "error_rate_nonconformal"),
    ("Error rate (conf)", "error_rate_conformal"),
    ("Efficiency", "efficiency"),
    ("Trivial rate", None),
    ("Mean l", "mean_low"),
    ("Mean h", "mean_high"),
    ("Negative %", "negative_percentage"),
    ("Exec time (s)", "exec_time_seconds"),
)


def _base_config(args) -> ExperimentConfig:
    path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    if path:
        return load_config(path)
    return ExperimentConfig()


def _infer_format(path, override=None) -> str:
    if override:
        return override
    return "csv" if str(path).endswith(".csv") else "jsonl"


def _load_dataset(args, cfg: ExperimentConfig) -> data.Dataset:
    path = getattr(args, "data", None) or cfg.data_path
    if not path:
        raise ConfigFileError("no dataset given: pass --data or set [io].data in the config")
    return data.load(path, _infer_format(path, getattr(args, "format", None)))


def _apply_overrides(args, cfg: ExperimentConfig) -> ExperimentConfig:
    if getattr(args, "alpha", None) is not None:
        cfg = dataclasses.replace(cfg, alpha=args.alpha)
    if getattr(args, "k", None) is not None:
        cfg = dataclasses.replace(cfg, k=args.k)
    if getattr(args, "optimizer", None):
        cfg = dataclasses.replace(
            cfg, optimizer=dataclasses.replace(cfg.optimizer, algorithm=args.optimizer)
        )
    if getattr(args, "loss", None):
        cfg = dataclasses.replace(cfg, loss=dataclasses.replace(cfg.loss, kind=args.loss))
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    if getattr(args, "workers", None) is not None:
        cfg = dataclasses.replace(cfg, workers=args.workers)
    return cfg


def cmd_gen(args) -> int:
    cfg = _base_config(args)
    gen = cfg.generator
    overrides = {}
    if args.n is not None:
        overrides["n_trajectories"] = args.n
    if args.waypoints is not None:
        overrides["waypoints"] = args.waypoints
    if args.noise_std is not None:
        overrides["noise_std"] = args.noise_std
    if args.obs_fraction is not None:
        overrides["observation_fraction"] = args.obs_fraction
    if args.seed is not None:
        overrides["seed"] = args.seed
    gen = dataclasses.replace(gen, **overrides)
    dataset = data.generate(gen)
    data.save(dataset, args.out, _infer_format(args.out, args.format))
    print(
        f"wrote {dataset.n} trajectories (T={dataset.length}, d={dataset.dimension}, "
        f"T_obs={dataset.obs_length}) to {args.out}"
    )
    return 0


def cmd_mine(args) -> int:
    cfg = _apply_overrides(args, _base_config(args))
    dataset = _load_dataset(args, cfg)
    trace: list | None = [] if args.trace else None
    pred, metrics = pipeline.run_trial(
        dataset, cfg.atoms, cfg.alpha, cfg.loss, cfg.optimizer, cfg.master_seed,
        k=cfg.k, trace=trace,
    )
    pipeline.save_predicate(pred, args.out)
    if args.trace:
        with open(args.trace, "w") as fh:
            fh.write("iteration,best_loss,best_expr\n")
            for it, loss, expr in trace:
                fh.write(f"{it},{float(loss)!r},\"{stl.to_sexpr(expr)}\"\n")
    print("phi* =")
    print(stl.pretty(pred.expr))
    print()
    _print_metrics(metrics)
    print(f"\npredicate written to {args.out}")
    return 0


def _print_metrics(m: pipeline.TrialMetrics) -> None:
    for name in pipeline.METRIC_FIELDS:
        value = getattr(m, name)
        if value is None:
            shown = "N/A"
        elif isinstance(value, bool):
            shown = str(value).lower()
        else:
            shown = f"{value:.4f}"
        print(f"  {name}: {shown}")


def _fmt_cell(agg, name, trivial_rate):
    if name is None:
        return f"{100.0 * trivial_rate:.1f}%"
    entry = agg[name]
    if entry["mean"] is None:
        return "N/A"
    if entry["two_sigma"] is None:
        return f"{entry['mean']:.3f} ± n/a"
    return f"{entry['mean']:.3f} ± {entry['two_sigma']:.3f}"


def format_report_table(rows) -> str:
    """Rows of (name, ExperimentReport) rendered as an aligned text table."""
    header = ["Trial"] + [label for label, _ in _TABLE_COLUMNS]
    table = [header]
    for name, report in rows:
        cells = [name]
        for _, metric in _TABLE_COLUMNS:
            cells.append(_fmt_cell(report.aggregates, metric, report.trivial_rate))
        table.append(cells)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def _trial_rows(args, cfg: ExperimentConfig):
    rows = []
    if args.optimizers:
        for name in args.optimizers.split(","):
            name = name.strip()
            if name not in ALGORITHMS:
                raise ConfigFileError(f"unknown optimizer {name!r} (choose from {ALGORITHMS})")
            rows.append((name, dataclasses.replace(
                cfg, optimizer=dataclasses.replace(cfg.optimizer, algorithm=name)), True))
    if args.ablations:
        for name in args.ablations.split(","):
            name = name.strip()
            if name == "telex":
                rows.append((name, dataclasses.replace(
                    cfg, loss=dataclasses.replace(cfg.loss, kind="telex")), True))
            elif name == "linear":
                rows.append((name, dataclasses.replace(
                    cfg, loss=dataclasses.replace(cfg.loss, kind="linear")), True))
            elif name == "no-trivial":
                rows.append((name, dataclasses.replace(
                    cfg, loss=dataclasses.replace(cfg.loss, a2=0.0)), True))
            elif name == "no-intervals":
                rows.append((name, cfg, False))
            else:
                raise ConfigFileError(f"unknown ablation {name!r} (choose from {ABLATIONS})")
    if not rows:
        rows.append((cfg.optimizer.algorithm, cfg, True))
    return rows


def cmd_trials(args) -> int:
    cfg = _apply_overrides(args, _base_config(args))
    if args.n is not None:
        cfg = dataclasses.replace(cfg, n_trials=args.n)
    if args.out_prefix is not None:
        cfg = dataclasses.replace(cfg, out_prefix=args.out_prefix)
    dataset = _load_dataset(args, cfg)
    printed = []
    for name, row_cfg, use_intervals in _trial_rows(args, cfg):
        report = pipeline.run_experiment(
            dataset, row_cfg.atoms, row_cfg.alpha, row_cfg.loss, row_cfg.optimizer,
            row_cfg.n_trials, row_cfg.master_seed, k=row_cfg.k,
            use_intervals=use_intervals, workers=row_cfg.workers,
        )
        csv_path = f"{cfg.out_prefix}_{name}.csv"
        json_path = f"{cfg.out_prefix}_{name}.json"
        with open(csv_path, "w") as fh:
            fh.write(pipeline.report_csv_text(report))
        with open(json_path, "w") as fh:
            json.dump(pipeline.report_json_dict(report), fh, sort_keys=True, indent=1)
        printed.append((name, report))
        print(f"[{name}] {len(report.trials)}/{report.n_requested} trials -> {csv_path}, {json_path}")
    print()
    print(format_report_table(printed))
    return 0


def cmd_plotdata(args) -> int:
    cfg = _base_config(args)
    pred = pipeline.load_predicate(args.predicate)
    dataset = _load_dataset(args, cfg)
    candidates = list(range(dataset.n))
    prov = pred.provenance
    if prov.get("dataset_hash") == dataset.content_hash() and "split" in prov:
        candidates = [int(i) for i in prov["split"]["val"]]
    rng = np.random.default_rng(args.seed)
    count = min(args.samples, len(candidates))
    chosen = sorted(int(i) for i in rng.choice(candidates, size=count, replace=False))
    observations = [dataset.observations[i] for i in chosen]
    trajectories = [dataset.trajectories[i] for i in chosen]
    features = np.stack([o.features() for o in observations])
    lows, highs = pred.interval_bounds(features)
    rho = pipeline._robustness_all(pred.expr, pred.atoms, trajectories)
    with open(args.out, "w") as fh:
        fh.write("sample_index,l,h,true_robustness,covered\n")
        for i, lo, hi, r in zip(chosen, lows, highs, rho):
            covered = "true" if lo <= r <= hi else "false"
            fh.write(f"{i},{float(lo)!r},{float(hi)!r},{float(r)!r},{covered}\n")
    print(f"wrote {count} interval rows to {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _base_config(args)
    pred = pipeline.load_predicate(args.predicate)
    dataset = _load_dataset(args, cfg)
    metrics = pipeline.compute_metrics(pred, dataset.observations, dataset.trajectories)
    print("phi* =")
    print(stl.pretty(pred.expr))
    print()
    _print_metrics(metrics)
    if args.out:
        payload = {
            name: getattr(metrics, name)
            for name in pipeline.METRIC_FIELDS
            if name != "exec_time_seconds"
        }
        with open(args.out, "w") as fh:
            json.dump(payload, fh, sort_keys=True)
        print(f"\nmetrics written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stlmine",
        description="Learn STL predicates from trajectory data with conformal guarantees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic trajectory dataset")
    p.add_argument("--config", help=f"TOML config path (or env {ENV_CONFIG})")
    p.add_argument("--n", type=int, help="number of trajectories")
    p.add_argument("--waypoints", type=int, help="waypoints per trajectory")
    p.add_argument("--noise-std", type=float, dest="noise_std", help="jitter / observation noise")
    p.add_argument("--obs-fraction", type=float, dest="obs_fraction", help="observed prefix fraction")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument("--format", choices=("jsonl", "csv"), help="output format (default by extension)")
    p.add_argument("--out", required=True, help="output dataset path")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("mine", help="mine one predicate from a dataset")
    p.add_argument("--config", help=f"TOML config path (or env {ENV_CONFIG})")
    p.add_argument("--data", help="dataset path (jsonl or csv)")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--optimizer", choices=ALGORITHMS, help="expression optimizer")
    p.add_argument("--loss", choices=("telex", "linear"), help="interval loss kind")
    p.add_argument("--alpha", type=float, help="target miscoverage level")
    p.add_argument("--k", type=int, help="kNN neighbor count")
    p.add_argument("--seed", type=int, help="trial seed")
    p.add_argument("--trace", help="optional CSV of best-so-far search progress")
    p.add_argument("--out", default="predicate.json", help="output predicate path")
    p.set_defaults(func=cmd_mine)

    p = sub.add_parser("trials", help="run multi-trial experiments and report tables")
    p.add_argument("--config", help=f"TOML config path (or env {ENV_CONFIG})")
    p.add_argument("--data", help="dataset path (jsonl or csv)")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--n", type=int, help="trials per configuration")
    p.add_argument("--optimizers", help="comma list from gp,mc,ge,ce")
    p.add_argument("--ablations", help=f"comma list from {','.join(ABLATIONS)}")
    p.add_argument("--alpha", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="parallel trial workers")
    p.add_argument("--out-prefix", dest="out_prefix", help="report file prefix")
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("plotdata", help="emit sampled validation intervals as CSV")
    p.add_argument("--config", help=f"TOML config path (or env {ENV_CONFIG})")
    p.add_argument("--predicate", required=True, help="mined predicate JSON")
    p.add_argument("--data", help="dataset path")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--samples", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_plotdata)

    p = sub.add_parser("eval", help="recompute metrics for a saved predicate on a dataset")
    p.add_argument("--config", help=f"TOML config path (or env {ENV_CONFIG})")
    p.add_argument("--predicate", required=True)
    p.add_argument("--data", help="dataset path")
    p.add_argument("--format", choices=("jsonl", "csv"))
    p.add_argument("--out", help="optional metrics JSON path")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, pipeline.TrialError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
