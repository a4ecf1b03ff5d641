"""End-to-end mining pipeline and multi-trial experiments.

One trial: split five ways, fit and conformalize per-atom predictors
(train + cal1), materialize intervals on test, search for the best
expression, refit and conformalize predictors for the mined expression on
train + cal2, and score everything on the untouched validation part.
The second calibration set keeps the final coverage guarantee honest:
mining never sees cal2 or val.
"""

from __future__ import annotations

import dataclasses
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import cqr, stl
from .data import Dataset, split
from .intervals import IntervalMatrix, compose_values
from .losses import LossConfig
from .optimize import OptimizerConfig, optimize

METRIC_FIELDS = (
    "error_rate_nonconformal",
    "error_rate_conformal",
    "efficiency",
    "is_trivial",
    "mean_low",
    "mean_high",
    "negative_percentage",
    "exec_time_seconds",
)

# exec time is wall clock and so excluded from deterministic file output
CSV_FIELDS = tuple(f for f in METRIC_FIELDS if f != "exec_time_seconds")


class TrialError(RuntimeError):
    """A pipeline stage failed; the message carries the stage name."""


@dataclass(frozen=True)
class TrialMetrics:
    error_rate_nonconformal: float | None
    error_rate_conformal: float
    efficiency: float
    is_trivial: bool
    mean_low: float
    mean_high: float
    negative_percentage: float
    exec_time_seconds: float


@dataclass(frozen=True)
class MinedPredicate:
    """A mined expression with its final conformalized robustness predictors."""

    expr: stl.StlExpr
    atoms: tuple[stl.Atom, ...]
    f1: cqr.QuantilePredictor
    f2: cqr.QuantilePredictor
    adjustment: cqr.ConformalAdjustment
    alpha: float
    provenance: dict

    def interval_bounds(self, features, conformal=True):
        adj = self.adjustment if conformal else None
        return cqr.interval_bounds(self.f1, self.f2, adj, features)


def negative_fraction(low: float, high: float) -> float:
    """Share of the interval's length lying below zero, in [0, 1]."""
    width = high - low
    if width <= 0:
        return 0.0 if low >= 0 else 1.0
    return max(0.0, min(high, 0.0) - low) / width


def _robustness_all(expr, atoms, trajectories):
    values = np.array(
        [[stl.atom_robustness(a, tr) for tr in trajectories] for a in atoms]
    )
    return compose_values(expr, values)


def compute_metrics(pred: MinedPredicate, observations, trajectories,
                    exec_time_seconds: float = 0.0,
                    include_nonconformal: bool = True) -> TrialMetrics:
    """Score a mined predicate on held-out (observation, trajectory) pairs."""
    if not len(observations):
        raise ValueError("compute_metrics needs a nonempty validation set")
    features = np.stack([o.features() for o in observations])
    rho = _robustness_all(pred.expr, pred.atoms, trajectories)
    lows, highs = pred.interval_bounds(features)
    covered = (rho >= lows) & (rho <= highs)
    if include_nonconformal:
        raw_lows, raw_highs = pred.interval_bounds(features, conformal=False)
        raw_covered = (rho >= raw_lows) & (rho <= raw_highs)
        err_raw = float(1.0 - np.mean(raw_covered))
    else:
        err_raw = None
    neg = np.array([negative_fraction(l, h) for l, h in zip(lows, highs)])
    return TrialMetrics(
        error_rate_nonconformal=err_raw,
        error_rate_conformal=float(1.0 - np.mean(covered)),
        efficiency=float(np.mean(highs - lows)),
        is_trivial=stl.is_trivial(pred.expr),
        mean_low=float(np.mean(lows)),
        mean_high=float(np.mean(highs)),
        negative_percentage=float(100.0 * np.mean(neg)),
        exec_time_seconds=float(exec_time_seconds),
    )


def _point_matrix(atoms, split_ds, features, labels, k):
    """Degenerate interval matrix from median point predictions (baseline)."""
    train = np.array(split_ds.train)
    test = np.array(split_ds.test)
    rows = []
    for row, _ in enumerate(atoms):
        mid = cqr.fit_quantile(features[train], labels[row][train], k, 0.5)
        rows.append(mid.predict(features[test]))
    values = np.array(rows)
    return IntervalMatrix(atoms, values, values)


def run_trial(dataset: Dataset, atoms, alpha: float, loss_cfg: LossConfig,
              opt_cfg: OptimizerConfig, seed: int, *, k: int | None = None,
              fractions=(0.2, 0.2, 0.2, 0.2, 0.2), use_intervals: bool = True,
              features=None, labels=None, trace: list | None = None):
    """One full mining trial; returns (MinedPredicate, TrialMetrics)."""
    atoms = tuple(sorted(atoms, key=lambda a: a.index))
    ss = np.random.SeedSequence(seed)
    split_seed, opt_seed = (int(s) for s in ss.generate_state(2))
    if features is None:
        features = cqr.observation_features(dataset)
    if labels is None:
        labels = cqr.atom_labels(atoms, dataset)

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise TrialError(f"stage {name!r} failed: {exc}") from exc

    sp = stage("split", split, dataset, fractions, split_seed)
    train = np.array(sp.train)
    cal2 = np.array(sp.cal2)
    val = np.array(sp.val)
    if k is None:
        k = cqr.default_k(len(train))

    bank = stage("fit_atom_bank", cqr.fit_atom_bank, atoms, sp, dataset, alpha, k,
                 features=features, labels=labels)
    matrix = bank.matrix if use_intervals else stage(
        "point_predictions", _point_matrix, atoms, sp, features, labels, k
    )

    mine_start = time.perf_counter()
    candidate = stage(
        "optimize", optimize, matrix, loss_cfg,
        dataclasses.replace(opt_cfg, seed=opt_seed), trace,
    )
    expr = candidate.expr

    phi_rho = compose_values(expr, labels)
    f1 = stage("final_fit", cqr.fit_quantile, features[train], phi_rho[train], k, alpha / 2)
    f2 = stage("final_fit", cqr.fit_quantile, features[train], phi_rho[train], k, 1 - alpha / 2)
    adj = stage("final_calibrate", cqr.calibrate, f1, f2, features[cal2], phi_rho[cal2], alpha)
    exec_time = time.perf_counter() - mine_start

    provenance = {
        "seed": seed,
        "alpha": alpha,
        "k": k,
        "dataset_hash": dataset.content_hash(),
        "loss": dataclasses.asdict(loss_cfg),
        "optimizer": dataclasses.asdict(dataclasses.replace(opt_cfg, seed=opt_seed)),
        "use_intervals": use_intervals,
        "split": {name: list(part) for name, part in sp.parts().items()},
        "mining_indices": sorted(bank.consumed_indices),
        "search_loss": candidate.loss,
    }
    pred = MinedPredicate(expr, atoms, f1, f2, adj, alpha, provenance)
    metrics = stage(
        "metrics", compute_metrics, pred,
        [dataset.observations[i] for i in val],
        [dataset.trajectories[i] for i in val],
        exec_time, use_intervals,
    )
    return pred, metrics


@dataclass(frozen=True)
class ExperimentReport:
    trials: tuple[TrialMetrics, ...]
    seeds: tuple[int, ...]
    aggregates: dict
    trivial_rate: float
    failures: tuple[tuple[int, str], ...]
    n_requested: int
    config: dict


def trial_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed) & 0xFFFFFFFF, index]).generate_state(1)[0])


def aggregate_metrics(trials) -> dict:
    """Mean and 2 * sample std per metric; bars are None for fewer than 2 rows."""
    out = {}
    for name in METRIC_FIELDS:
        if name == "is_trivial":
            continue
        values = [getattr(t, name) for t in trials if getattr(t, name) is not None]
        if not values:
            out[name] = {"mean": None, "two_sigma": None}
            continue
        arr = np.array(values, dtype=float)
        two_sigma = float(2.0 * arr.std(ddof=1)) if len(arr) >= 2 else None
        out[name] = {"mean": float(arr.mean()), "two_sigma": two_sigma}
    return out


def run_experiment(dataset: Dataset, atoms, alpha: float, loss_cfg: LossConfig,
                   opt_cfg: OptimizerConfig, n_trials: int, master_seed: int = 0, *,
                   k: int | None = None, fractions=(0.2, 0.2, 0.2, 0.2, 0.2),
                   use_intervals: bool = True, workers: int = 1) -> ExperimentReport:
    """Independent reshuffled trials with per-trial derived seeds."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    atoms = tuple(sorted(atoms, key=lambda a: a.index))
    features = cqr.observation_features(dataset)
    labels = cqr.atom_labels(atoms, dataset)
    seeds = [trial_seed(master_seed, i) for i in range(n_trials)]

    def one(i):
        return run_trial(
            dataset, atoms, alpha, loss_cfg, opt_cfg, seeds[i], k=k,
            fractions=fractions, use_intervals=use_intervals,
            features=features, labels=labels,
        )

    results: list = [None] * n_trials
    failures: list[tuple[int, str]] = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(one, i) for i in range(n_trials)}
            for i, fut in futures.items():
                try:
                    results[i] = fut.result()
                except TrialError as exc:
                    failures.append((i, str(exc)))
    else:
        for i in range(n_trials):
            try:
                results[i] = one(i)
            except TrialError as exc:
                failures.append((i, str(exc)))
    if len(failures) > 0.2 * n_trials:
        detail = "; ".join(msg for _, msg in failures[:3])
        raise TrialError(f"{len(failures)} of {n_trials} trials failed: {detail}")
    ok = [r for r in results if r is not None]
    trials = tuple(m for _, m in ok)
    trivial_rate = float(np.mean([m.is_trivial for m in trials])) if trials else 0.0
    config = {
        "alpha": alpha,
        "k": k,
        "loss": dataclasses.asdict(loss_cfg),
        "optimizer": dataclasses.asdict(opt_cfg),
        "n_trials": n_trials,
        "master_seed": master_seed,
        "use_intervals": use_intervals,
        "fractions": list(fractions),
        "dataset_hash": dataset.content_hash(),
    }
    return ExperimentReport(
        trials=trials,
        seeds=tuple(seeds[i] for i in range(n_trials) if results[i] is not None),
        aggregates=aggregate_metrics(trials),
        trivial_rate=trivial_rate,
        failures=tuple(failures),
        n_requested=n_trials,
        config=config,
    )


# --- Report and predicate serialization --------------------------------------


def report_csv_text(report: ExperimentReport) -> str:
    """Per-trial CSV (deterministic: wall-time column intentionally omitted)."""
    buf = io.StringIO()
    buf.write("trial,seed," + ",".join(CSV_FIELDS) + "\n")
    for i, (seed, m) in enumerate(zip(report.seeds, report.trials)):
        row = [str(i), str(seed)]
        for name in CSV_FIELDS:
            v = getattr(m, name)
            if v is None:
                row.append("")
            elif isinstance(v, bool):
                row.append("true" if v else "false")
            else:
                row.append(repr(float(v)))
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def report_json_dict(report: ExperimentReport) -> dict:
    aggregates = {k: v for k, v in report.aggregates.items() if k != "exec_time_seconds"}
    return {
        "config": report.config,
        "n_requested": report.n_requested,
        "n_completed": len(report.trials),
        "failures": [{"trial": i, "error": msg} for i, msg in report.failures],
        "aggregates": aggregates,
        "trivial_rate": report.trivial_rate,
    }


def predicate_to_dict(pred: MinedPredicate) -> dict:
    return {
        "sexpr": stl.to_sexpr(pred.expr),
        "alpha": pred.alpha,
        "adjustment": {"q": pred.adjustment.q, "n": pred.adjustment.n},
        "atoms": [cqr.atom_to_dict(a) for a in pred.atoms],
        "f1": cqr._predictor_to_dict(pred.f1),
        "f2": cqr._predictor_to_dict(pred.f2),
        "provenance": pred.provenance,
    }


def predicate_from_dict(d: dict) -> MinedPredicate:
    atoms = tuple(cqr.atom_from_dict(a) for a in d["atoms"])
    expr = stl.parse_sexpr(d["sexpr"], atoms)
    return MinedPredicate(
        expr,
        atoms,
        cqr._predictor_from_dict(d["f1"]),
        cqr._predictor_from_dict(d["f2"]),
        cqr.ConformalAdjustment(float(d["adjustment"]["q"]), float(d["alpha"]), int(d["adjustment"]["n"])),
        float(d["alpha"]),
        d["provenance"],
    )


def save_predicate(pred: MinedPredicate, path) -> None:
    with open(path, "w") as fh:
        json.dump(predicate_to_dict(pred), fh, sort_keys=True)


def load_predicate(path) -> MinedPredicate:
    with open(path) as fh:
        return predicate_from_dict(json.load(fh))
