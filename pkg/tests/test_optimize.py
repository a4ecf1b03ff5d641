import numpy as np
import pytest

from stlmine import stl
from stlmine.intervals import IntervalMatrix
from stlmine.losses import LossConfig
from stlmine.optimize import (
    ALGORITHMS,
    OptimizerConfig,
    decode_genome,
    optimize,
    sample_random_expr,
)
from stlmine.stl import Atom, BoxRegion, EVENTUALLY_IN_BOX, leaf


def atoms_of(m):
    return tuple(
        Atom(i + 1, EVENTUALLY_IN_BOX, f"a{i+1}", region=BoxRegion((0, 0), (1, 1 + i)))
        for i in range(m)
    )


ATOMS = atoms_of(5)


def rigged_matrix(columns=40):
    # Atom 1 alone zeroes the interval loss; everything else is far negative.
    lows = np.full((5, columns), -5.0)
    highs = np.full((5, columns), -4.0)
    lows[0, :] = 0.3
    highs[0, :] = 0.6
    return IntervalMatrix(ATOMS, lows, highs)


SMALL = {
    "gp": OptimizerConfig(algorithm="gp", iterations=15, population=30, seed=0),
    "mc": OptimizerConfig(algorithm="mc", samples=2000, seed=0),
    "ge": OptimizerConfig(algorithm="ge", iterations=15, population=30, seed=0),
    "ce": OptimizerConfig(algorithm="ce", iterations=15, population=30, seed=0),
}


class TestSampling:
    def test_depth_one_always_single_leaf(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            e = sample_random_expr(ATOMS, 1, rng)
            assert e.op == "atom"

    def test_samples_are_valid_and_depth_capped(self):
        rng = np.random.default_rng(1)
        for _ in range(2000):
            e = sample_random_expr(ATOMS, 5, rng)
            stl.validate_expr(e, 5)
            assert stl.depth(e) <= 5

    def test_deterministic_for_fixed_seed(self):
        a = sample_random_expr(ATOMS, 5, np.random.default_rng(42))
        b = sample_random_expr(ATOMS, 5, np.random.default_rng(42))
        assert a == b

    def test_genome_decode_deterministic_and_valid(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            genome = rng.integers(0, 256, 40)
            e = decode_genome(genome, ATOMS, 5)
            assert decode_genome(genome, ATOMS, 5) == e
            stl.validate_expr(e, 5)
            assert stl.depth(e) <= 5


class TestOptimize:
    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_all_algorithms_find_the_planted_atom(self, algo):
        matrix = rigged_matrix()
        cand = optimize(matrix, LossConfig(kind="linear", a1=0.001, a2=0.0), SMALL[algo])
        want = stl.truth_table(leaf(ATOMS[0]), 5)
        assert stl.truth_table(cand.expr, 5).bits == want.bits

    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_deterministic_given_seed(self, algo):
        matrix = rigged_matrix()
        cfg = SMALL[algo]
        a = optimize(matrix, LossConfig(), cfg)
        b = optimize(matrix, LossConfig(), cfg)
        assert a.expr == b.expr and a.loss == b.loss

    def test_monte_carlo_single_sample_returns_it(self):
        matrix = rigged_matrix()
        cfg = OptimizerConfig(algorithm="mc", samples=1, seed=7)
        cand = optimize(matrix, LossConfig(a2=0.0), cfg)
        expected = sample_random_expr(ATOMS, cfg.max_depth, np.random.default_rng(7))
        assert cand.expr == expected

    @pytest.mark.parametrize("algo", ALGORITHMS)
    def test_more_budget_never_hurts(self, algo):
        # Same seed: the longer run shares the shorter run's prefix of draws.
        import dataclasses

        matrix = rigged_matrix()
        key, (lo, hi) = ("samples", (50, 500)) if algo == "mc" else ("iterations", (1, 10))
        short = optimize(matrix, LossConfig(), dataclasses.replace(SMALL[algo], **{key: lo}))
        long = optimize(matrix, LossConfig(), dataclasses.replace(SMALL[algo], **{key: hi}))
        assert long.loss <= short.loss

    def test_zero_budget_rejected(self):
        matrix = rigged_matrix()
        with pytest.raises(ValueError):
            optimize(matrix, LossConfig(), OptimizerConfig(algorithm="mc", samples=0))
        for algo in ("gp", "ge", "ce"):
            with pytest.raises(ValueError):
                optimize(matrix, LossConfig(), OptimizerConfig(algorithm=algo, iterations=0))

    def test_loss_ties_break_toward_smaller_trees(self):
        # Identical rows everywhere: every expression built from positive rows
        # ties on interval loss, so the single leaf must win outright.
        lows = np.full((5, 20), 0.3)
        highs = np.full((5, 20), 0.6)
        matrix = IntervalMatrix(ATOMS, lows, highs)
        cand = optimize(matrix, LossConfig(kind="linear", a1=0.0, a2=0.0),
                        OptimizerConfig(algorithm="mc", samples=500, seed=3))
        assert stl.size(cand.expr) == 1

    def test_candidate_stats_match_composition(self):
        matrix = rigged_matrix()
        cand = optimize(matrix, LossConfig(a2=0.0), SMALL["mc"])
        from stlmine.intervals import compose_bounds

        lows, highs = compose_bounds(cand.expr, matrix)
        assert cand.mean_low == pytest.approx(float(np.mean(lows)))
        assert cand.mean_high == pytest.approx(float(np.mean(highs)))

    def test_every_evaluated_candidate_is_validated(self, monkeypatch):
        seen = []
        original = stl.validate_expr

        def spy(expr, atom_count):
            seen.append(expr)
            return original(expr, atom_count)

        monkeypatch.setattr(stl, "validate_expr", spy)
        optimize(rigged_matrix(), LossConfig(), SMALL["gp"])
        assert seen
        for expr in seen:
            original(expr, 5)

    def test_trace_records_progress(self):
        trace = []
        optimize(rigged_matrix(), LossConfig(), SMALL["gp"], trace=trace)
        assert trace
        losses = [t[1] for t in trace]
        assert losses == sorted(losses, reverse=True)

    def test_alias_names_accepted(self):
        cfg = OptimizerConfig(algorithm="genetic_programming")
        assert cfg.algorithm == "gp"
        with pytest.raises(ValueError):
            OptimizerConfig(algorithm="bogus")

    def test_empty_matrix_rejected(self):
        matrix = IntervalMatrix(ATOMS, np.zeros((5, 0)), np.zeros((5, 0)))
        with pytest.raises(ValueError):
            optimize(matrix, LossConfig(), SMALL["mc"])
