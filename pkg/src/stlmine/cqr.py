"""kNN quantile regression with split conformal calibration.

For each predicate a pair of quantile predictors (levels alpha/2 and
1 - alpha/2) is fit on training observations against true robustness
labels, then widened by the conformal adjustment: the ceil((n+1)(1-alpha))
smallest calibration score, where the score of a calibration pair is
max(f1(z) - y, y - f2(z)). Intervals built this way cover the true
robustness of exchangeable unseen data with probability at least 1 - alpha.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import stl
from .intervals import IntervalMatrix, RobustnessInterval
from .stl import Atom, BoxRegion


class CalibrationError(ValueError):
    """Calibration set too small for the requested confidence level."""


@dataclass(frozen=True, eq=False)
class QuantilePredictor:
    """Empirical level-quantile of the labels of the k nearest neighbors.

    Distances are Euclidean over per-feature standardized coordinates;
    the prediction is the order statistic of rank ceil(level * k) among
    the neighbor labels (lower empirical quantile).
    """

    k: int
    level: float
    features: np.ndarray  # (n, F), already standardized
    labels: np.ndarray  # (n,)
    center: np.ndarray  # (F,)
    scale: np.ndarray  # (F,)

    def predict(self, queries) -> np.ndarray:
        queries = np.asarray(queries, dtype=float)
        single = queries.ndim == 1
        if single:
            queries = queries[None, :]
        if queries.shape[1] != self.features.shape[1]:
            raise ValueError(
                f"query has {queries.shape[1]} features, predictor expects {self.features.shape[1]}"
            )
        z = (queries - self.center) / self.scale
        d2 = (z * z).sum(axis=1)[:, None] + (self.features * self.features).sum(axis=1)[None, :]
        d2 -= 2.0 * (z @ self.features.T)
        neighbor_idx = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        neighbor_labels = np.sort(self.labels[neighbor_idx], axis=1)
        rank = min(max(1, math.ceil(self.level * self.k)), self.k)
        out = neighbor_labels[:, rank - 1]
        return out[0] if single else out


@dataclass(frozen=True)
class ConformalAdjustment:
    q: float
    alpha: float
    n: int


def fit_quantile(features, labels, k: int, level: float) -> QuantilePredictor:
    """Fit a kNN quantile predictor; standardization comes from these features."""
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if features.ndim != 2:
        raise ValueError(f"features must be 2D, got shape {features.shape}")
    n = features.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"{n} feature rows but {labels.shape} labels")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if not 0 < level < 1:
        raise ValueError(f"level must be in (0, 1), got {level}")
    center = features.mean(axis=0)
    scale = features.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return QuantilePredictor(int(k), float(level), (features - center) / scale, labels, center, scale)


def conformal_rank(n: int, alpha: float) -> int:
    """ceil((n + 1) (1 - alpha)), computed with a guard against float drift."""
    return math.ceil((n + 1) * (1.0 - alpha) - 1e-9)


def calibrate(f1: QuantilePredictor, f2: QuantilePredictor, cal_features, cal_labels, alpha: float) -> ConformalAdjustment:
    """Conformal adjustment from held-out calibration pairs."""
    cal_features = np.asarray(cal_features, dtype=float)
    cal_labels = np.asarray(cal_labels, dtype=float)
    n = cal_features.shape[0]
    if n == 0:
        raise CalibrationError("calibration set is empty")
    rank = conformal_rank(n, alpha)
    if rank > n:
        raise CalibrationError(
            f"calibration needs ceil((n+1)(1-alpha)) <= n; n={n} is too small for alpha={alpha}"
        )
    scores = np.maximum(f1.predict(cal_features) - cal_labels, cal_labels - f2.predict(cal_features))
    q = float(np.sort(scores)[rank - 1])
    return ConformalAdjustment(q, float(alpha), n)


def interval_bounds(f1, f2, adj, queries):
    """Calibrated (lows, highs) arrays for a query batch.

    Raw quantile inversions swap before widening. A negative adjustment can
    shrink an interval past its midpoint (the conformal set is then empty);
    such pairs collapse to the degenerate midpoint so output stays ordered.
    """
    lo = np.atleast_1d(f1.predict(queries))
    hi = np.atleast_1d(f2.predict(queries))
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    q = 0.0 if adj is None else adj.q
    lo, hi = lo - q, hi + q
    mid = 0.5 * (lo + hi)
    return np.minimum(lo, mid), np.maximum(hi, mid)


def predict_interval(f1, f2, adj: ConformalAdjustment, z) -> RobustnessInterval:
    lows, highs = interval_bounds(f1, f2, adj, np.asarray(z, dtype=float)[None, :])
    return RobustnessInterval(lows[0], highs[0])


# --- Atom banks --------------------------------------------------------------


def observation_features(dataset) -> np.ndarray:
    """Flattened observation prefixes, one row per dataset index."""
    return np.stack([obs.features() for obs in dataset.observations])


def atom_labels(atoms, dataset) -> np.ndarray:
    """True robustness of every atom on every full trajectory, shape (M, N)."""
    return np.array(
        [[stl.atom_robustness(a, tr) for tr in dataset.trajectories] for a in atoms]
    )


def default_k(n_train: int) -> int:
    return max(1, math.ceil(math.sqrt(n_train)))


class AtomBank:
    """Per-atom calibrated predictor pairs plus their test-set interval matrix."""

    def __init__(self, atoms, predictors, matrix, alpha, k, consumed_indices, test_indices):
        self.atoms = tuple(atoms)
        self.predictors = tuple(predictors)  # (f1, f2, adjustment) per atom
        self.matrix = matrix
        self.alpha = float(alpha)
        self.k = int(k)
        self.consumed_indices = frozenset(consumed_indices)
        self.test_indices = tuple(test_indices)


def fit_atom_bank(atoms, split_ds, dataset, alpha: float, k: int | None = None,
                  features=None, labels=None) -> AtomBank:
    """Fit, calibrate, and materialize test intervals for every atom.

    Training pairs come from the train part, the conformal adjustment from
    cal1, and the interval matrix covers every test observation. Precomputed
    feature/label matrices may be passed to avoid recomputation.
    """
    atoms = tuple(sorted(atoms, key=lambda a: a.index))
    if not atoms:
        raise ValueError("atom bank needs at least one atom")
    if [a.index for a in atoms] != list(range(1, len(atoms) + 1)):
        raise ValueError("atom indices must be exactly 1..M")
    if features is None:
        features = observation_features(dataset)
    if labels is None:
        labels = atom_labels(atoms, dataset)
    train = np.array(split_ds.train)
    cal1 = np.array(split_ds.cal1)
    test = np.array(split_ds.test)
    if k is None:
        k = default_k(len(train))
    predictors = []
    lows = np.empty((len(atoms), len(test)))
    highs = np.empty((len(atoms), len(test)))
    for row, atom in enumerate(atoms):
        y = labels[row]
        f1 = fit_quantile(features[train], y[train], k, alpha / 2)
        f2 = fit_quantile(features[train], y[train], k, 1 - alpha / 2)
        adj = calibrate(f1, f2, features[cal1], y[cal1], alpha)
        predictors.append((f1, f2, adj))
        lows[row], highs[row] = interval_bounds(f1, f2, adj, features[test])
    matrix = IntervalMatrix(atoms, lows, highs)
    consumed = set(split_ds.train) | set(split_ds.cal1) | set(split_ds.test)
    return AtomBank(atoms, predictors, matrix, alpha, k, consumed, split_ds.test)


# --- Serialization ------------------------------------------------------------


def atom_to_dict(a: Atom) -> dict:
    d = {"index": a.index, "kind": a.kind, "label": a.label}
    if a.region is not None:
        d["box"] = [*a.region.low, *a.region.high]
    if a.flag_component is not None:
        d["flag_component"] = a.flag_component
    if a.position_components != (0, 1):
        d["position_components"] = list(a.position_components)
    return d


def atom_from_dict(d: dict) -> Atom:
    region = None
    if "box" in d:
        b = d["box"]
        region = BoxRegion((b[0], b[1]), (b[2], b[3]))
    return Atom(
        int(d["index"]),
        d["kind"],
        d["label"],
        region=region,
        flag_component=d.get("flag_component"),
        position_components=tuple(d.get("position_components", (0, 1))),
    )


def _predictor_to_dict(p: QuantilePredictor) -> dict:
    return {
        "k": p.k,
        "level": p.level,
        "features": p.features.tolist(),
        "labels": p.labels.tolist(),
        "center": p.center.tolist(),
        "scale": p.scale.tolist(),
    }


def _predictor_from_dict(d: dict) -> QuantilePredictor:
    return QuantilePredictor(
        int(d["k"]),
        float(d["level"]),
        np.array(d["features"], dtype=float),
        np.array(d["labels"], dtype=float),
        np.array(d["center"], dtype=float),
        np.array(d["scale"], dtype=float),
    )


def bank_to_dict(bank: AtomBank) -> dict:
    return {
        "alpha": bank.alpha,
        "k": bank.k,
        "atoms": [atom_to_dict(a) for a in bank.atoms],
        "predictors": [
            {"f1": _predictor_to_dict(f1), "f2": _predictor_to_dict(f2),
             "q": adj.q, "n": adj.n}
            for f1, f2, adj in bank.predictors
        ],
        "matrix": {"lows": bank.matrix.lows.tolist(), "highs": bank.matrix.highs.tolist()},
        "consumed_indices": sorted(bank.consumed_indices),
        "test_indices": list(bank.test_indices),
    }


def bank_from_dict(d: dict) -> AtomBank:
    atoms = tuple(atom_from_dict(a) for a in d["atoms"])
    predictors = [
        (
            _predictor_from_dict(p["f1"]),
            _predictor_from_dict(p["f2"]),
            ConformalAdjustment(float(p["q"]), float(d["alpha"]), int(p["n"])),
        )
        for p in d["predictors"]
    ]
    matrix = IntervalMatrix(atoms, np.array(d["matrix"]["lows"]), np.array(d["matrix"]["highs"]))
    return AtomBank(
        atoms, predictors, matrix, d["alpha"], d["k"], d["consumed_indices"], d["test_indices"]
    )


def save_bank(bank: AtomBank, path) -> None:
    with open(path, "w") as fh:
        json.dump(bank_to_dict(bank), fh, sort_keys=True)


def load_bank(path) -> AtomBank:
    with open(path) as fh:
        return bank_from_dict(json.load(fh))
