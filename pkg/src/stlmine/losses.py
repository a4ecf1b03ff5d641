"""Loss functions over robustness confidence intervals and the total objective.

Both interval losses penalize negative and large positive robustness: the
linear loss is zero on [0, w] and grows linearly outside it; the smooth
telex loss has a unique interior minimum at a small positive value. The
total objective adds node-count and triviality penalties weighted by a1
and a2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import stl

POLE_EPS = 1e-12
POLE_PENALTY = 1e9

LOSS_KINDS = ("linear", "telex")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "telex"
    w: float = 0.5  # slack width: robustness in [0, w] is free
    slope: float = 1.0  # over-width slope of the linear loss
    beta: float = 5.0  # sharpness of the smooth loss
    a1: float = 0.001  # node-count penalty weight
    a2: float = 1.0  # triviality penalty weight

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"loss kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if not self.w > 0:
            raise ValueError(f"w must be positive, got {self.w}")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.a1 < 0 or self.a2 < 0:
            raise ValueError(f"penalty weights must be >= 0, got a1={self.a1}, a2={self.a2}")


def linear_loss(low: float, high: float, cfg: LossConfig) -> float:
    """max of the per-endpoint hinge penalties, zero when both sit in [0, w]."""
    lo_term = max(-low, 0.0, cfg.slope * (low - cfg.w))
    hi_term = max(-high, 0.0, cfg.slope * (high - cfg.w))
    return max(lo_term, hi_term)


def _telex_term(v: float, beta: float) -> float:
    try:
        den = v + math.exp(-beta * v)
    except OverflowError:
        return POLE_PENALTY
    if abs(den) < POLE_EPS:
        return POLE_PENALTY
    try:
        out = -1.0 / den + math.exp(-v)
    except OverflowError:
        return POLE_PENALTY
    if not math.isfinite(out):
        return POLE_PENALTY
    return out


def telex_loss(low: float, high: float, cfg: LossConfig) -> float:
    """Sum of the smooth per-value penalties at low and at high - w."""
    t1 = _telex_term(low, cfg.beta)
    t2 = _telex_term(high - cfg.w, cfg.beta)
    if t1 >= POLE_PENALTY or t2 >= POLE_PENALTY:
        return POLE_PENALTY
    loss = t1 + t2
    if not math.isfinite(loss) or loss > POLE_PENALTY:
        return POLE_PENALTY
    return loss


def interval_loss(low: float, high: float, cfg: LossConfig) -> float:
    if cfg.kind == "linear":
        return linear_loss(low, high, cfg)
    return telex_loss(low, high, cfg)


def batch_interval_loss(lows, highs, cfg: LossConfig) -> np.ndarray:
    """Vectorized interval loss; matches the scalar functions elementwise."""
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    if cfg.kind == "linear":
        lo_term = np.maximum(np.maximum(-lows, 0.0), cfg.slope * (lows - cfg.w))
        hi_term = np.maximum(np.maximum(-highs, 0.0), cfg.slope * (highs - cfg.w))
        return np.maximum(lo_term, hi_term)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = _telex_term_vec(lows, cfg.beta) + _telex_term_vec(highs - cfg.w, cfg.beta)
    return np.where(np.isfinite(out) & (out <= POLE_PENALTY), out, POLE_PENALTY)


def _telex_term_vec(v, beta):
    den = v + np.exp(-beta * v)
    term = np.where(np.abs(den) < POLE_EPS, np.nan, -1.0 / den) + np.exp(-v)
    return term


def total_loss(expr: stl.StlExpr, intervals, cfg: LossConfig) -> float:
    """Mean per-trajectory interval loss plus the weighted tree penalties."""
    if not len(intervals):
        raise ValueError("total_loss needs at least one interval")
    lows = np.array([iv.low for iv in intervals])
    highs = np.array([iv.high for iv in intervals])
    return total_loss_from_bounds(expr, lows, highs, cfg)


def total_loss_from_bounds(expr, lows, highs, cfg: LossConfig) -> float:
    loss = float(np.mean(batch_interval_loss(lows, highs, cfg)))
    if cfg.a1:
        loss += cfg.a1 * stl.length_penalty(expr)
    if cfg.a2:
        loss += cfg.a2 * stl.trivial_penalty(expr)
    return loss
