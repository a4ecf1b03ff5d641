"""Synthetic trajectory generation, observations, splits, and file I/O.

The built-in generator draws piecewise-linear 2D paths from a start region
through one of several weighted routes (sequences of via boxes), pins the
sampled via points as waypoints, resamples to a fixed length, and jitters
every waypoint. Observations are noisy prefixes of the full trajectories.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from .stl import BoxRegion, Trajectory

VIA_INSET = 0.15  # via points are sampled this fraction inside each box side


class ConfigError(ValueError):
    """Invalid generator or split configuration."""


class ParseError(ValueError):
    """Malformed dataset file record."""


class SchemaError(ValueError):
    """Structurally valid file with inconsistent trajectory data."""


@dataclass(frozen=True, eq=False)
class Observation:
    """Noisy prefix of a trajectory, the input side of every predictor."""

    states: np.ndarray
    source_id: object

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float).copy()
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError(f"observation states must be (T_obs, d), got {states.shape}")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def length(self):
        return self.states.shape[0]

    def features(self) -> np.ndarray:
        return self.states.ravel()

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return self.source_id == other.source_id and np.array_equal(self.states, other.states)


@dataclass(frozen=True)
class Route:
    """Ordered via boxes ending at the destination, with a selection weight."""

    boxes: tuple[BoxRegion, ...]
    weight: float = 1.0

    def __post_init__(self):
        if not self.boxes:
            raise ConfigError("a route needs at least one via box")
        if not self.weight > 0:
            raise ConfigError(f"route weight must be positive, got {self.weight}")


# Default scenario: paths fork just past the start into one of three lanes
# (small via boxes, not atoms), each ending in a terminal box. The terminal
# boxes overlap slightly so near-miss margins stay small; the gate box spans
# the fork and the decoy box is never visited.
START_BOX = BoxRegion((0.5, 4.5), (1.5, 5.5))
GATE_BOX = BoxRegion((1.8, 2.9), (4.4, 7.1))
LANE_BOXES = (
    BoxRegion((3.1, 6.0), (3.9, 6.8)),
    BoxRegion((3.1, 4.6), (3.9, 5.4)),
    BoxRegion((3.1, 3.2), (3.9, 4.0)),
)
TOP_BOX = BoxRegion((8.0, 5.6), (10.0, 7.2))
MIDDLE_BOX = BoxRegion((8.0, 4.2), (10.0, 5.8))
BOTTOM_BOX = BoxRegion((8.0, 2.8), (10.0, 4.4))
DECOY_BOX = BoxRegion((5.0, 7.6), (7.0, 9.2))


def _default_start() -> BoxRegion:
    return START_BOX


def _default_routes() -> tuple[Route, ...]:
    return (
        Route((LANE_BOXES[0], TOP_BOX)),
        Route((LANE_BOXES[1], MIDDLE_BOX)),
        Route((LANE_BOXES[2], BOTTOM_BOX)),
    )


@dataclass(frozen=True)
class GeneratorConfig:
    n_trajectories: int = 2000
    waypoints: int = 20
    noise_std: float = 0.05
    observation_fraction: float = 0.5
    seed: int = 0
    start: BoxRegion = field(default_factory=_default_start)
    routes: tuple[Route, ...] = field(default_factory=_default_routes)

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ConfigError(f"n_trajectories must be >= 1, got {self.n_trajectories}")
        if self.waypoints < 2:
            raise ConfigError(f"waypoints must be >= 2, got {self.waypoints}")
        if not 0 < self.observation_fraction < 1:
            raise ConfigError(
                f"observation_fraction must be in (0, 1), got {self.observation_fraction}"
            )
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if not self.routes:
            raise ConfigError("at least one route is required")
        longest = max(len(r.boxes) for r in self.routes)
        if self.waypoints < longest + 1:
            raise ConfigError(
                f"routes with {longest} via boxes need at least {longest + 1} waypoints"
            )


class Dataset:
    """Paired full trajectories and their observations, plus generation metadata."""

    def __init__(self, trajectories, observations, *, noise_std, observation_fraction, seed):
        trajectories = tuple(trajectories)
        observations = tuple(observations)
        if not trajectories:
            raise ValueError("dataset must contain at least one trajectory")
        if len(observations) != len(trajectories):
            raise ValueError("each trajectory needs exactly one observation")
        t0 = trajectories[0]
        for tr in trajectories:
            if tr.length != t0.length or tr.dimension != t0.dimension:
                raise SchemaError(
                    f"trajectory {tr.id!r} has shape ({tr.length}, {tr.dimension}), "
                    f"expected ({t0.length}, {t0.dimension})"
                )
        self.trajectories = trajectories
        self.observations = observations
        self.noise_std = float(noise_std)
        self.observation_fraction = float(observation_fraction)
        self.seed = int(seed)

    @property
    def n(self):
        return len(self.trajectories)

    @property
    def length(self):
        return self.trajectories[0].length

    @property
    def dimension(self):
        return self.trajectories[0].dimension

    @property
    def obs_length(self):
        return self.observations[0].length

    def pairs(self):
        return list(zip(self.trajectories, self.observations))

    def content_hash(self) -> str:
        h = 0
        for tr in self.trajectories:
            h = zlib.crc32(repr(tr.id).encode(), h)
            h = zlib.crc32(np.ascontiguousarray(tr.states).tobytes(), h)
        return f"{h:08x}"

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.trajectories == other.trajectories
            and self.observations == other.observations
            and self.noise_std == other.noise_std
            and self.observation_fraction == other.observation_fraction
            and self.seed == other.seed
        )


def observe(x: Trajectory, fraction: float, noise_std: float, seed) -> Observation:
    """Noisy observed prefix of ceil(fraction * T) states (always < T)."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    if x.length < 2:
        raise ValueError("cannot observe a prefix of a length-1 trajectory")
    t_obs = min(max(1, math.ceil(fraction * x.length)), x.length - 1)
    rng = np.random.default_rng(seed)
    prefix = x.states[:t_obs] + rng.normal(0.0, noise_std, (t_obs, x.dimension))
    return Observation(prefix, x.id)


def _observation_seed(dataset_seed: int, traj_id) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(dataset_seed) & 0xFFFFFFFF, zlib.crc32(repr(traj_id).encode())])


def derive_observations(trajectories, fraction, noise_std, seed):
    """Observations for each trajectory from per-id derived seeds."""
    return tuple(
        observe(tr, fraction, noise_std, _observation_seed(seed, tr.id)) for tr in trajectories
    )


def _sample_in_box(box: BoxRegion, rng, inset: float) -> np.ndarray:
    low = np.array(box.low)
    high = np.array(box.high)
    pad = inset * (high - low)
    return rng.uniform(low + pad, high - pad)


def _pin_indices(points: np.ndarray, total: int) -> list[int]:
    # Waypoint index for each path point, proportional to arc length,
    # forced strictly increasing with the endpoints pinned.
    seglen = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cumulative = np.concatenate([[0.0], np.cumsum(seglen)])
    span = cumulative[-1] if cumulative[-1] > 0 else 1.0
    idx = [int(round((total - 1) * c / span)) for c in cumulative]
    idx[0], idx[-1] = 0, total - 1
    for j in range(1, len(idx)):
        idx[j] = max(idx[j], idx[j - 1] + 1)
    overflow = idx[-1] - (total - 1)
    if overflow > 0:
        for j in range(len(idx) - 1, 0, -1):
            idx[j] = min(idx[j], total - 1 - (len(idx) - 1 - j))
        for j in range(1, len(idx)):
            idx[j] = max(idx[j], idx[j - 1] + 1)
    if idx[-1] != total - 1 or len(set(idx)) != len(idx):
        raise ConfigError(f"cannot pin {len(idx)} path points into {total} waypoints")
    return idx


def _resample_path(points: np.ndarray, total: int) -> np.ndarray:
    idx = _pin_indices(points, total)
    out = np.empty((total, points.shape[1]))
    for seg in range(len(idx) - 1):
        a, b = idx[seg], idx[seg + 1]
        for j in range(a, b):
            frac = (j - a) / (b - a)
            out[j] = points[seg] + frac * (points[seg + 1] - points[seg])
    out[-1] = points[-1]
    return out


def generate(config: GeneratorConfig) -> Dataset:
    """Sample a full dataset of trajectories plus observations, seeded."""
    rng = np.random.default_rng(config.seed)
    weights = np.array([r.weight for r in config.routes], dtype=float)
    weights = weights / weights.sum()
    trajectories = []
    for i in range(config.n_trajectories):
        route = config.routes[int(rng.choice(len(config.routes), p=weights))]
        pts = [_sample_in_box(config.start, rng, 0.0)]
        pts.extend(_sample_in_box(box, rng, VIA_INSET) for box in route.boxes)
        states = _resample_path(np.asarray(pts), config.waypoints)
        if config.noise_std > 0:
            states = states + rng.normal(0.0, config.noise_std, states.shape)
        trajectories.append(Trajectory(states, id=i))
    observations = derive_observations(
        trajectories, config.observation_fraction, config.noise_std, config.seed
    )
    return Dataset(
        trajectories,
        observations,
        noise_std=config.noise_std,
        observation_fraction=config.observation_fraction,
        seed=config.seed,
    )


@dataclass(frozen=True)
class SplitDataset:
    """Disjoint index sets covering a dataset: train/cal1/test/cal2/val."""

    train: tuple[int, ...]
    cal1: tuple[int, ...]
    test: tuple[int, ...]
    cal2: tuple[int, ...]
    val: tuple[int, ...]

    def parts(self):
        return {
            "train": self.train,
            "cal1": self.cal1,
            "test": self.test,
            "cal2": self.cal2,
            "val": self.val,
        }


def split(dataset: Dataset, fractions=(0.2, 0.2, 0.2, 0.2, 0.2), seed=0) -> SplitDataset:
    """Uniformly random disjoint five-way partition of dataset indices."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 5:
        raise ValueError(f"need exactly five fractions, got {len(fractions)}")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = dataset.n
    counts = [int(math.floor(f * n)) for f in fractions]
    remainders = [f * n - c for f, c in zip(fractions, counts)]
    for _ in range(n - sum(counts)):
        j = max(range(5), key=lambda i: (remainders[i], -i))
        counts[j] += 1
        remainders[j] = -1.0
    if any(c == 0 for c in counts):
        raise ValueError(f"split produces an empty part for n={n}, fractions={fractions}")
    perm = np.random.default_rng(seed).permutation(n)
    parts = []
    at = 0
    for c in counts:
        parts.append(tuple(sorted(int(i) for i in perm[at : at + c])))
        at += c
    return SplitDataset(*parts)


# --- File formats -----------------------------------------------------------

_META_KEYS = ("length", "dim", "noise_std", "observation_fraction", "seed")


def save(dataset: Dataset, path, fmt: str) -> None:
    if fmt == "jsonl":
        _save_jsonl(dataset, path)
    elif fmt == "csv":
        _save_csv(dataset, path)
    else:
        raise ValueError(f"unknown format {fmt!r} (expected jsonl or csv)")


def load(dataset_path, fmt: str, *, noise_std=None, observation_fraction=None, seed=None) -> Dataset:
    """Load trajectories and re-derive observations from metadata.

    JSONL files carry their observation metadata in a header record; CSV
    files do not, so the keyword overrides (or defaults 0.05 / 0.5 / 0)
    decide how observations are derived.
    """
    if fmt == "jsonl":
        trajectories, meta = _load_jsonl(dataset_path)
    elif fmt == "csv":
        trajectories, meta = _load_csv(dataset_path)
    else:
        raise ValueError(f"unknown format {fmt!r} (expected jsonl or csv)")
    ns = meta.get("noise_std", 0.05) if noise_std is None else noise_std
    frac = meta.get("observation_fraction", 0.5) if observation_fraction is None else observation_fraction
    sd = meta.get("seed", 0) if seed is None else seed
    observations = derive_observations(trajectories, frac, ns, sd)
    return Dataset(
        trajectories, observations, noise_std=ns, observation_fraction=frac, seed=sd
    )


def _save_jsonl(dataset: Dataset, path) -> None:
    header = {
        "length": dataset.length,
        "dim": dataset.dimension,
        "noise_std": dataset.noise_std,
        "observation_fraction": dataset.observation_fraction,
        "seed": dataset.seed,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for tr in dataset.trajectories:
            record = {"id": tr.id, "states": [list(row) for row in tr.states]}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def _load_jsonl(path):
    trajectories = []
    meta = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON record: {exc}") from exc
            if not isinstance(record, dict):
                raise ParseError(f"{path}:{lineno}: record must be an object")
            if "id" not in record:
                if lineno == 1 and "states" not in record:
                    unknown = set(record) - set(_META_KEYS)
                    if unknown:
                        raise ParseError(f"{path}:1: unknown header keys {sorted(unknown)}")
                    meta = record
                    continue
                raise ParseError(f"{path}:{lineno}: record missing 'id'")
            if "states" not in record:
                raise ParseError(f"{path}:{lineno}: record missing 'states'")
            try:
                states = np.asarray(record["states"], dtype=float)
            except (TypeError, ValueError) as exc:
                raise ParseError(f"{path}:{lineno}: states are not numeric: {exc}") from exc
            if states.ndim != 2:
                raise ParseError(f"{path}:{lineno}: states must be a rectangular 2D list")
            trajectories.append(Trajectory(states, id=record["id"]))
    if not trajectories:
        raise SchemaError(f"{path}: no trajectory records")
    _check_uniform(trajectories, path)
    return trajectories, meta


def _check_uniform(trajectories, path):
    t0 = trajectories[0]
    for tr in trajectories:
        if tr.length != t0.length or tr.dimension != t0.dimension:
            raise SchemaError(
                f"{path}: trajectory {tr.id!r} has shape ({tr.length}, {tr.dimension}), "
                f"expected ({t0.length}, {t0.dimension})"
            )


def _save_csv(dataset: Dataset, path) -> None:
    cols = ["id", "t"] + [f"c{i}" for i in range(dataset.dimension)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for tr in dataset.trajectories:
            for t, row in enumerate(tr.states):
                writer.writerow([tr.id, t] + [repr(float(v)) for v in row])


def _load_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header[:2] != ["id", "t"]:
            raise SchemaError(f"{path}: header must start with id,t got {header[:2]}")
        coord_cols = header[2:]
        expected = [f"c{i}" for i in range(len(coord_cols))]
        if not coord_cols or coord_cols != expected:
            raise SchemaError(
                f"{path}: coordinate columns must be c0..c{{d-1}}, got {coord_cols}"
            )
        rows: dict[str, list[tuple[int, list[float]]]] = {}
        order: list[str] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                t = int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-numeric field: {exc}") from exc
            if row[0] not in rows:
                rows[row[0]] = []
                order.append(row[0])
            rows[row[0]].append((t, values))
    trajectories = []
    for tid in order:
        entries = sorted(rows[tid])
        times = [t for t, _ in entries]
        if times != list(range(len(times))):
            raise SchemaError(f"{path}: trajectory {tid!r} has gaps in t: {times[:5]}...")
        trajectories.append(Trajectory(np.array([v for _, v in entries]), id=tid))
    if not trajectories:
        raise SchemaError(f"{path}: no trajectory rows")
    _check_uniform(trajectories, path)
    return trajectories, {}
