"""Randomized search for expression trees minimizing the interval objective.

Four interchangeable algorithms over the same grammar (atoms, not, and, or):
plain Monte Carlo sampling, genetic programming with subtree crossover and
mutation, grammatical evolution over integer genomes, and a cross-entropy
method fitting per-depth production weights. All are deterministic given
their seed; ties in loss resolve toward smaller trees, then earlier
discovery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import stl
from .intervals import IntervalMatrix, compose_bounds
from .losses import LossConfig, total_loss_from_bounds

ALGORITHMS = ("gp", "mc", "ge", "ce")
_ALIASES = {
    "genetic_programming": "gp",
    "monte_carlo": "mc",
    "grammatical_evolution": "ge",
    "cross_entropy": "ce",
}
_DEPTH_SLACK = 3  # crossover may grow trees this far past the sampling depth
_CE_SMOOTHING = 0.5


@dataclass(frozen=True)
class OptimizerConfig:
    algorithm: str = "gp"
    iterations: int = 500
    samples: int = 10_000  # Monte Carlo budget
    population: int = 100
    max_depth: int = 5
    crossover_rate: float = 0.8
    mutation_rate: float = 0.2
    tournament: int = 3
    elite_fraction: float = 0.1
    genome_length: int = 60
    seed: int = 0

    def __post_init__(self):
        algorithm = _ALIASES.get(self.algorithm, self.algorithm)
        object.__setattr__(self, "algorithm", algorithm)
        if algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.max_depth < 1:
            raise ValueError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.population < 2:
            raise ValueError(f"population must be >= 2, got {self.population}")
        if self.genome_length < 4:
            raise ValueError(f"genome_length must be >= 4, got {self.genome_length}")
        if self.tournament < 1:
            raise ValueError(f"tournament must be >= 1, got {self.tournament}")
        for name in ("crossover_rate", "mutation_rate", "elite_fraction"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Candidate:
    expr: stl.StlExpr
    loss: float
    mean_low: float
    mean_high: float


def sample_random_expr(atoms, max_depth: int, rng) -> stl.StlExpr:
    """Random grammar tree; leaf probability rises with depth, forced at the cap."""
    if not atoms:
        raise ValueError("need at least one atom")
    if max_depth < 1:
        raise ValueError(f"max_depth must be >= 1, got {max_depth}")

    def build(d):
        if d >= max_depth or rng.random() < d / max_depth:
            return stl.leaf(atoms[int(rng.integers(len(atoms)))])
        r = rng.random()
        if r < 1 / 3:
            return stl.negate(build(d + 1))
        if r < 2 / 3:
            return stl.conj(build(d + 1), build(d + 1))
        return stl.disj(build(d + 1), build(d + 1))

    return build(1)


class _Search:
    """Shared fitness evaluation with memoization and best-candidate tracking."""

    def __init__(self, matrix: IntervalMatrix, loss_cfg: LossConfig):
        self.matrix = matrix
        self.loss_cfg = loss_cfg
        self.atom_count = matrix.atom_count
        self.cache: dict[stl.StlExpr, tuple[float, int, float, float]] = {}
        self.best = None  # (loss, size, seq, expr, mean_low, mean_high)
        self.seq = 0

    def evaluate(self, expr: stl.StlExpr) -> float:
        hit = self.cache.get(expr)
        if hit is None:
            stl.validate_expr(expr, self.atom_count)
            lows, highs = compose_bounds(expr, self.matrix)
            loss = total_loss_from_bounds(expr, lows, highs, self.loss_cfg)
            hit = (loss, stl.size(expr), float(np.mean(lows)), float(np.mean(highs)))
            self.cache[expr] = hit
        loss, nodes, mean_low, mean_high = hit
        if self.best is None or (loss, nodes) < (self.best[0], self.best[1]):
            self.best = (loss, nodes, self.seq, expr, mean_low, mean_high)
        self.seq += 1
        return loss

    def candidate(self) -> Candidate:
        loss, _, _, expr, mean_low, mean_high = self.best
        return Candidate(expr, loss, mean_low, mean_high)


def optimize(matrix: IntervalMatrix, loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
             trace: list | None = None) -> Candidate:
    """Run the configured algorithm and return the best candidate found."""
    if matrix.column_count == 0:
        raise ValueError("interval matrix has no columns")
    rng = np.random.default_rng(opt_cfg.seed)
    search = _Search(matrix, loss_cfg)
    atoms = matrix.atoms
    if opt_cfg.algorithm == "mc":
        _monte_carlo(search, opt_cfg, atoms, rng, trace)
    elif opt_cfg.algorithm == "gp":
        _genetic_programming(search, opt_cfg, atoms, rng, trace)
    elif opt_cfg.algorithm == "ge":
        _grammatical_evolution(search, opt_cfg, atoms, rng, trace)
    else:
        _cross_entropy(search, opt_cfg, atoms, rng, trace)
    return search.candidate()


def _log(trace, iteration, search):
    if trace is not None:
        trace.append((iteration, search.best[0], search.best[3]))


def _monte_carlo(search, opt, atoms, rng, trace):
    if opt.samples < 1:
        raise ValueError(f"samples must be >= 1, got {opt.samples}")
    for i in range(opt.samples):
        loss = search.evaluate(sample_random_expr(atoms, opt.max_depth, rng))
        if trace is not None and (search.best[2] == search.seq - 1 or i == opt.samples - 1):
            _log(trace, i, search)


# --- Genetic programming ----------------------------------------------------


def _paths(e: stl.StlExpr, prefix=()):
    yield prefix
    for i, c in enumerate(e.children):
        yield from _paths(c, prefix + (i,))


def _subtree(e, path):
    for i in path:
        e = e.children[i]
    return e


def _replace(e, path, sub):
    if not path:
        return sub
    i = path[0]
    kids = list(e.children)
    kids[i] = _replace(kids[i], path[1:], sub)
    if e.op == stl.OP_NOT:
        return stl.negate(kids[0])
    if e.op == stl.OP_AND:
        return stl.conj(*kids)
    return stl.disj(*kids)


def _pick_path(e, rng):
    paths = list(_paths(e))
    return paths[int(rng.integers(len(paths)))]


def _tournament_pick(scored, t, rng):
    best = None
    for _ in range(t):
        i = int(rng.integers(len(scored)))
        if best is None or scored[i][0] < scored[best][0]:
            best = i
    return scored[best][1]


def _crossover(a, b, rng, cap):
    pa = _pick_path(a, rng)
    pb = _pick_path(b, rng)
    child = _replace(a, pa, _subtree(b, pb))
    return child if stl.depth(child) <= cap else a


def _point_mutation(e, atoms, max_depth, rng, cap):
    path = _pick_path(e, rng)
    budget = max(1, max_depth - len(path))
    child = _replace(e, path, sample_random_expr(atoms, budget, rng))
    return child if stl.depth(child) <= cap else e


def _genetic_programming(search, opt, atoms, rng, trace):
    if opt.iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {opt.iterations}")
    cap = opt.max_depth + _DEPTH_SLACK
    pop = [sample_random_expr(atoms, opt.max_depth, rng) for _ in range(opt.population)]
    scored = [(search.evaluate(e), e) for e in pop]
    for it in range(opt.iterations):
        elite = min(range(len(scored)), key=lambda i: (scored[i][0], i))
        new = [scored[elite][1]]
        while len(new) < opt.population:
            child = _tournament_pick(scored, opt.tournament, rng)
            if rng.random() < opt.crossover_rate:
                other = _tournament_pick(scored, opt.tournament, rng)
                child = _crossover(child, other, rng, cap)
            if rng.random() < opt.mutation_rate:
                child = _point_mutation(child, atoms, opt.max_depth, rng, cap)
            new.append(child)
        scored = [(search.evaluate(e), e) for e in new]
        _log(trace, it, search)


# --- Grammatical evolution ---------------------------------------------------


def decode_genome(genome, atoms, max_depth: int) -> stl.StlExpr:
    """Map an integer genome to a tree: codons pick productions modulo choices."""
    m = len(atoms)
    pos = 0

    def next_codon():
        nonlocal pos
        c = int(genome[pos % len(genome)])
        pos += 1
        return c

    def expand(d):
        if d >= max_depth:
            return stl.leaf(atoms[next_codon() % m])
        choice = next_codon() % 4
        if choice == 0:
            return stl.leaf(atoms[next_codon() % m])
        if choice == 1:
            return stl.negate(expand(d + 1))
        if choice == 2:
            return stl.conj(expand(d + 1), expand(d + 1))
        return stl.disj(expand(d + 1), expand(d + 1))

    return expand(1)


def _grammatical_evolution(search, opt, atoms, rng, trace):
    if opt.iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {opt.iterations}")
    genomes = [rng.integers(0, 256, opt.genome_length) for _ in range(opt.population)]
    scored = [(search.evaluate(decode_genome(g, atoms, opt.max_depth)), g) for g in genomes]
    for it in range(opt.iterations):
        elite = min(range(len(scored)), key=lambda i: (scored[i][0], i))
        new = [scored[elite][1]]
        while len(new) < opt.population:
            child = _tournament_pick(scored, opt.tournament, rng)
            if rng.random() < opt.crossover_rate:
                other = _tournament_pick(scored, opt.tournament, rng)
                cut = int(rng.integers(1, opt.genome_length))
                child = np.concatenate([child[:cut], other[cut:]])
            if rng.random() < opt.mutation_rate:
                child = child.copy()
                child[int(rng.integers(opt.genome_length))] = int(rng.integers(0, 256))
            new.append(child)
        scored = [(search.evaluate(decode_genome(g, atoms, opt.max_depth)), g) for g in new]
        _log(trace, it, search)


# --- Cross-entropy method ----------------------------------------------------


def _ce_sample(weights, atoms, max_depth, rng):
    m = len(atoms)

    def node(d):
        row = weights[min(d, max_depth) - 1]
        if d >= max_depth:
            w = row[:m]
            total = w.sum()
            p = w / total if total > 0 else np.full(m, 1.0 / m)
            return stl.leaf(atoms[int(rng.choice(m, p=p))])
        choice = int(rng.choice(m + 3, p=row))
        if choice < m:
            return stl.leaf(atoms[choice])
        if choice == m:
            return stl.negate(node(d + 1))
        if choice == m + 1:
            return stl.conj(node(d + 1), node(d + 1))
        return stl.disj(node(d + 1), node(d + 1))

    return node(1)


def _ce_count(e, d, counts, m, max_depth):
    row = counts[min(d, max_depth) - 1]
    if e.op == stl.OP_ATOM:
        row[e.atom.index - 1] += 1
        return
    if e.op == stl.OP_NOT:
        row[m] += 1
    elif e.op == stl.OP_AND:
        row[m + 1] += 1
    else:
        row[m + 2] += 1
    for c in e.children:
        _ce_count(c, d + 1, counts, m, max_depth)


def _cross_entropy(search, opt, atoms, rng, trace):
    if opt.iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {opt.iterations}")
    m = len(atoms)
    n_prod = m + 3
    weights = [np.full(n_prod, 1.0 / n_prod) for _ in range(opt.max_depth)]
    elite_n = max(1, math.ceil(opt.elite_fraction * opt.population))
    for it in range(opt.iterations):
        pop = [_ce_sample(weights, atoms, opt.max_depth, rng) for _ in range(opt.population)]
        scored = sorted(
            ((search.evaluate(e), i, e) for i, e in enumerate(pop)), key=lambda s: (s[0], s[1])
        )
        counts = [np.full(n_prod, _CE_SMOOTHING) for _ in range(opt.max_depth)]
        for _, _, e in scored[:elite_n]:
            _ce_count(e, 1, counts, m, opt.max_depth)
        weights = [c / c.sum() for c in counts]
        _log(trace, it, search)
