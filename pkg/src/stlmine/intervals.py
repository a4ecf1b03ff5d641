"""Composition of robustness confidence intervals through expression trees.

An and combines child intervals by elementwise min, an or by elementwise
max, and a not maps [l, h] to [-h, -l]. The result is an outer bound: any
point robustness computed from values inside the input intervals lands
inside the composed interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stl import OP_AND, OP_ATOM, OP_NOT, Atom, StlExpr


@dataclass(frozen=True)
class RobustnessInterval:
    """Ordered pair of robustness bounds [low, high]."""

    low: float
    high: float

    def __post_init__(self):
        object.__setattr__(self, "low", float(self.low))
        object.__setattr__(self, "high", float(self.high))
        if math.isnan(self.low) or math.isnan(self.high):
            raise ValueError("interval bounds must not be NaN")
        if self.low > self.high:
            raise ValueError(f"inverted interval [{self.low}, {self.high}]")

    @property
    def width(self):
        return self.high - self.low


class IntervalMatrix:
    """Per-atom intervals for a batch of trajectories: one row per atom.

    Rows follow the atom bank order (atom with index i sits in row i - 1);
    columns are trajectories.
    """

    def __init__(self, atoms: tuple[Atom, ...], lows, highs):
        lows = np.asarray(lows, dtype=float)
        highs = np.asarray(highs, dtype=float)
        if lows.shape != highs.shape or lows.ndim != 2:
            raise ValueError(f"bounds must be equal 2D shapes, got {lows.shape} vs {highs.shape}")
        if len(atoms) != lows.shape[0]:
            raise ValueError(f"{len(atoms)} atoms but {lows.shape[0]} rows")
        if sorted(a.index for a in atoms) != list(range(1, len(atoms) + 1)):
            raise ValueError("atom indices must be exactly 1..M")
        if not (np.all(np.isfinite(lows)) and np.all(np.isfinite(highs))):
            raise ValueError("interval bounds must be finite")
        if np.any(lows > highs):
            raise ValueError("inverted interval entries")
        self.atoms = tuple(sorted(atoms, key=lambda a: a.index))
        self.lows = lows
        self.highs = highs
        self.lows.setflags(write=False)
        self.highs.setflags(write=False)

    @property
    def atom_count(self):
        return self.lows.shape[0]

    @property
    def column_count(self):
        return self.lows.shape[1]

    def column(self, j: int) -> list[RobustnessInterval]:
        return [RobustnessInterval(self.lows[i, j], self.highs[i, j]) for i in range(self.atom_count)]


def compose(expr: StlExpr, column) -> RobustnessInterval:
    """Compose one interval per atom through the expression tree."""
    low, high = _compose_scalar(expr, column)
    return RobustnessInterval(low, high)


def _compose_scalar(expr, column):
    if expr.op == OP_ATOM:
        idx = expr.atom.index
        if idx > len(column):
            raise ValueError(f"no interval for atom {idx} (column has {len(column)})")
        iv = column[idx - 1]
        return iv.low, iv.high
    if expr.op == OP_NOT:
        low, high = _compose_scalar(expr.children[0], column)
        return -high, -low
    parts = [_compose_scalar(c, column) for c in expr.children]
    if expr.op == OP_AND:
        if not parts:
            return math.inf, math.inf
        return min(p[0] for p in parts), min(p[1] for p in parts)
    if not parts:
        return -math.inf, -math.inf
    return max(p[0] for p in parts), max(p[1] for p in parts)


def compose_bounds(expr: StlExpr, matrix: IntervalMatrix):
    """Vectorized composition over all columns; returns (lows, highs) arrays."""
    lows, highs = _compose_vec(expr, matrix.lows, matrix.highs)
    n = matrix.column_count
    if np.ndim(lows) == 0:
        lows = np.full(n, float(lows))
        highs = np.full(n, float(highs))
    return lows, highs


def _compose_vec(expr, lows, highs):
    if expr.op == OP_ATOM:
        idx = expr.atom.index
        if idx > lows.shape[0]:
            raise ValueError(f"no interval row for atom {idx}")
        return lows[idx - 1], highs[idx - 1]
    if expr.op == OP_NOT:
        lo, hi = _compose_vec(expr.children[0], lows, highs)
        return -hi, -lo
    parts = [_compose_vec(c, lows, highs) for c in expr.children]
    if expr.op == OP_AND:
        if not parts:
            return math.inf, math.inf
        lo = parts[0][0]
        hi = parts[0][1]
        for plo, phi in parts[1:]:
            lo = np.minimum(lo, plo)
            hi = np.minimum(hi, phi)
        return lo, hi
    if not parts:
        return -math.inf, -math.inf
    lo = parts[0][0]
    hi = parts[0][1]
    for plo, phi in parts[1:]:
        lo = np.maximum(lo, plo)
        hi = np.maximum(hi, phi)
    return lo, hi


def compose_all(expr: StlExpr, matrix: IntervalMatrix) -> list[RobustnessInterval]:
    """Compose every column of the matrix; output length equals column count."""
    lows, highs = compose_bounds(expr, matrix)
    return [RobustnessInterval(l, h) for l, h in zip(lows, highs)]


def compose_values(expr: StlExpr, values: np.ndarray) -> np.ndarray:
    """Scalar robustness recursion over a per-atom value matrix (M, n).

    Matches the robustness semantics exactly when the values are true
    per-atom robustness numbers; used for point-prediction baselines and
    fast batch evaluation.
    """
    if expr.op == OP_ATOM:
        return values[expr.atom.index - 1]
    if expr.op == OP_NOT:
        return -compose_values(expr.children[0], values)
    parts = [compose_values(c, values) for c in expr.children]
    if expr.op == OP_AND:
        if not parts:
            return np.full(values.shape[1], math.inf)
        out = parts[0]
        for p in parts[1:]:
            out = np.minimum(out, p)
        return out
    if not parts:
        return np.full(values.shape[1], -math.inf)
    out = parts[0]
    for p in parts[1:]:
        out = np.maximum(out, p)
    return out
