"""Experiment configuration: defaults, TOML parsing, and validation.

Unknown sections or keys are rejected outright so typos fail loudly before
any stage runs. Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import data
from .data import GeneratorConfig, Route
from .losses import LossConfig
from .optimize import OptimizerConfig
from .stl import ALWAYS_FLAG, ALWAYS_IN_BOX, EVENTUALLY_IN_BOX, Atom, BoxRegion


class ConfigFileError(ValueError):
    """Config file failed validation."""


def default_atoms() -> tuple[Atom, ...]:
    boxes = (data.DECOY_BOX, data.GATE_BOX, data.TOP_BOX, data.MIDDLE_BOX, data.BOTTOM_BOX)
    return tuple(
        Atom(i + 1, EVENTUALLY_IN_BOX, f"box{i + 1}", region=box) for i, box in enumerate(boxes)
    )


@dataclass(frozen=True)
class ExperimentConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    atoms: tuple[Atom, ...] = field(default_factory=default_atoms)
    alpha: float = 0.1
    k: int | None = None
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    n_trials: int = 50
    master_seed: int = 0
    workers: int = 1
    data_path: str | None = None
    out_prefix: str = "report"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigFileError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.k is not None and self.k < 1:
            raise ConfigFileError(f"k must be >= 1, got {self.k}")
        if self.n_trials < 1:
            raise ConfigFileError(f"n_trials must be >= 1, got {self.n_trials}")
        if self.workers < 1:
            raise ConfigFileError(f"workers must be >= 1, got {self.workers}")
        if not self.atoms:
            raise ConfigFileError("at least one atom is required")
        indices = sorted(a.index for a in self.atoms)
        if indices != list(range(1, len(self.atoms) + 1)):
            raise ConfigFileError(f"atom indices must be exactly 1..M, got {indices}")


_SECTIONS = ("generator", "atoms", "cqr", "loss", "optimizer", "trials", "io")

_GENERATOR_KEYS = ("n", "waypoints", "noise_std", "observation_fraction", "seed", "start", "routes")
_ATOM_KEYS = ("kind", "label", "box", "flag_component", "position_components")
_CQR_KEYS = ("alpha", "k")
_LOSS_KEYS = ("kind", "w", "slope", "beta", "a1", "a2")
_OPTIMIZER_KEYS = (
    "algorithm", "iterations", "samples", "population", "max_depth",
    "crossover_rate", "mutation_rate", "tournament", "elite_fraction", "genome_length",
)
_TRIALS_KEYS = ("n", "seed", "workers")
_IO_KEYS = ("data", "out_prefix")


def _check_keys(section: str, table: dict, allowed) -> None:
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigFileError(f"unknown keys in [{section}]: {unknown} (allowed: {sorted(allowed)})")


def _parse_box(value, where: str) -> BoxRegion:
    if not (isinstance(value, (list, tuple)) and len(value) == 4):
        raise ConfigFileError(f"{where}: box must be [a1, b1, a2, b2], got {value!r}")
    try:
        return BoxRegion((value[0], value[1]), (value[2], value[3]))
    except ValueError as exc:
        raise ConfigFileError(f"{where}: {exc}") from exc


def _parse_generator(table: dict) -> GeneratorConfig:
    _check_keys("generator", table, _GENERATOR_KEYS)
    kwargs = {}
    if "n" in table:
        kwargs["n_trajectories"] = int(table["n"])
    for key in ("waypoints", "seed"):
        if key in table:
            kwargs[key] = int(table[key])
    for key in ("noise_std", "observation_fraction"):
        if key in table:
            kwargs[key] = float(table[key])
    if "start" in table:
        kwargs["start"] = _parse_box(table["start"], "generator.start")
    if "routes" in table:
        routes = []
        for i, rt in enumerate(table["routes"]):
            _check_keys(f"generator.routes[{i}]", rt, ("boxes", "weight"))
            if "boxes" not in rt:
                raise ConfigFileError(f"generator.routes[{i}]: missing 'boxes'")
            boxes = tuple(
                _parse_box(b, f"generator.routes[{i}].boxes[{j}]") for j, b in enumerate(rt["boxes"])
            )
            routes.append(Route(boxes, float(rt.get("weight", 1.0))))
        kwargs["routes"] = tuple(routes)
    try:
        return GeneratorConfig(**kwargs)
    except data.ConfigError as exc:
        raise ConfigFileError(f"[generator]: {exc}") from exc


def _parse_atoms(entries) -> tuple[Atom, ...]:
    atoms = []
    for i, entry in enumerate(entries):
        _check_keys(f"atoms[{i}]", entry, _ATOM_KEYS)
        kind = entry.get("kind", EVENTUALLY_IN_BOX)
        if kind not in (EVENTUALLY_IN_BOX, ALWAYS_IN_BOX, ALWAYS_FLAG):
            raise ConfigFileError(f"atoms[{i}]: unknown kind {kind!r}")
        region = None
        if "box" in entry:
            region = _parse_box(entry["box"], f"atoms[{i}].box")
        try:
            atoms.append(
                Atom(
                    i + 1,
                    kind,
                    entry.get("label", f"atom{i + 1}"),
                    region=region,
                    flag_component=entry.get("flag_component"),
                    position_components=tuple(entry.get("position_components", (0, 1))),
                )
            )
        except ValueError as exc:
            raise ConfigFileError(f"atoms[{i}]: {exc}") from exc
    return tuple(atoms)


def parse_config_dict(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_SECTIONS))
    if unknown:
        raise ConfigFileError(f"unknown config sections: {unknown} (allowed: {sorted(_SECTIONS)})")
    cfg = ExperimentConfig()
    if "generator" in raw:
        cfg = replace(cfg, generator=_parse_generator(raw["generator"]))
    if "atoms" in raw:
        cfg = replace(cfg, atoms=_parse_atoms(raw["atoms"]))
    if "cqr" in raw:
        _check_keys("cqr", raw["cqr"], _CQR_KEYS)
        if "alpha" in raw["cqr"]:
            cfg = replace(cfg, alpha=float(raw["cqr"]["alpha"]))
        if "k" in raw["cqr"]:
            cfg = replace(cfg, k=int(raw["cqr"]["k"]))
    if "loss" in raw:
        _check_keys("loss", raw["loss"], _LOSS_KEYS)
        kwargs = {k: raw["loss"][k] for k in _LOSS_KEYS if k in raw["loss"]}
        try:
            cfg = replace(cfg, loss=LossConfig(**kwargs))
        except ValueError as exc:
            raise ConfigFileError(f"[loss]: {exc}") from exc
    if "optimizer" in raw:
        _check_keys("optimizer", raw["optimizer"], _OPTIMIZER_KEYS)
        kwargs = {k: raw["optimizer"][k] for k in _OPTIMIZER_KEYS if k in raw["optimizer"]}
        try:
            cfg = replace(cfg, optimizer=OptimizerConfig(**kwargs))
        except ValueError as exc:
            raise ConfigFileError(f"[optimizer]: {exc}") from exc
    if "trials" in raw:
        _check_keys("trials", raw["trials"], _TRIALS_KEYS)
        t = raw["trials"]
        cfg = replace(
            cfg,
            n_trials=int(t.get("n", cfg.n_trials)),
            master_seed=int(t.get("seed", cfg.master_seed)),
            workers=int(t.get("workers", cfg.workers)),
        )
    if "io" in raw:
        _check_keys("io", raw["io"], _IO_KEYS)
        cfg = replace(
            cfg,
            data_path=raw["io"].get("data", cfg.data_path),
            out_prefix=raw["io"].get("out_prefix", cfg.out_prefix),
        )
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigFileError(f"{path}: invalid TOML: {exc}") from exc
    try:
        return parse_config_dict(raw)
    except ConfigFileError as exc:
        raise ConfigFileError(f"{path}: {exc}") from exc
