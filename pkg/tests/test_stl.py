import math

import numpy as np
import pytest

from stlmine import stl
from stlmine.optimize import sample_random_expr
from stlmine.stl import (
    ALWAYS_FLAG,
    ALWAYS_IN_BOX,
    EVENTUALLY_IN_BOX,
    FALSE,
    TRUE,
    Atom,
    BoxRegion,
    CapacityError,
    DimensionError,
    SexprError,
    Trajectory,
    conj,
    disj,
    leaf,
    negate,
)


def box_atom(index, low, high, kind=EVENTUALLY_IN_BOX, label=None):
    return Atom(index, kind, label or f"box{index}", region=BoxRegion(low, high))


def unit_atoms(m):
    """m structurally distinct atoms; geometry irrelevant for Boolean tests."""
    return [box_atom(i + 1, (0.0, 0.0), (2.0, 2.0 + i)) for i in range(m)]


def traj(*points):
    return Trajectory(np.array(points, dtype=float), id="t")


class TestAtomRobustness:
    def test_eventually_single_state_min_of_margins(self):
        # Oracle: enumerate the four halfspace margins of (1, 1) in (0,0)-(2,3).
        margins = [1.0 - 0.0, 2.0 - 1.0, 1.0 - 0.0, 3.0 - 1.0]
        atom = box_atom(1, (0.0, 0.0), (2.0, 3.0))
        assert stl.atom_robustness(atom, traj((1.0, 1.0))) == min(margins) == 1.0

    def test_eventually_is_max_over_time(self):
        # States chosen so the margin sequence is [-1.0, 0.5, -2.0].
        atom = box_atom(1, (0.0, 0.0), (2.0, 2.0))
        x = traj((-1.0, 1.0), (0.5, 1.0), (-2.0, 1.0))
        assert stl.atom_robustness(atom, x) == 0.5

    def test_always_is_min_over_time(self):
        atom = box_atom(1, (0.0, 0.0), (2.0, 2.0), kind=ALWAYS_IN_BOX)
        x = traj((-1.0, 1.0), (0.5, 1.0), (-2.0, 1.0))
        assert stl.atom_robustness(atom, x) == -2.0

    def test_always_flag_is_min_of_component(self):
        atom = Atom(1, ALWAYS_FLAG, "is_set", flag_component=2)
        x = traj((0.0, 0.0, 1.0), (0.0, 0.0, -0.5), (0.0, 0.0, 2.0))
        assert stl.atom_robustness(atom, x) == -0.5

    def test_dimension_mismatch_raises(self):
        atom = Atom(1, ALWAYS_FLAG, "is_set", flag_component=2)
        with pytest.raises(DimensionError):
            stl.atom_robustness(atom, traj((0.0, 0.0)))
        shifted = Atom(1, EVENTUALLY_IN_BOX, "b", region=BoxRegion((0, 0), (1, 1)),
                       position_components=(1, 2))
        with pytest.raises(DimensionError):
            stl.atom_robustness(shifted, traj((0.0, 0.0)))

    def test_eventually_monotone_in_box_enlargement(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            low = rng.uniform(-2, 0, 2)
            high = rng.uniform(0.5, 3, 2)
            grow = rng.uniform(0, 1, 2)
            small = box_atom(1, tuple(low), tuple(high))
            big = box_atom(1, tuple(low - grow), tuple(high + grow))
            x = Trajectory(rng.uniform(-4, 4, (6, 2)), id="m")
            assert stl.atom_robustness(big, x) >= stl.atom_robustness(small, x)


class TestRobustness:
    # Two atoms with point robustness 0.2 and 0.7 at state (0.2, 1).
    A = box_atom(1, (0.0, 0.0), (2.0, 2.0))
    B = box_atom(2, (-0.5, 0.0), (2.0, 2.0))
    X = traj((0.2, 1.0))

    def test_atom_values(self):
        assert stl.robustness(leaf(self.A), self.X) == pytest.approx(0.2)
        assert stl.robustness(leaf(self.B), self.X) == pytest.approx(0.7)

    def test_negation(self):
        assert stl.robustness(negate(leaf(self.A)), self.X) == pytest.approx(-0.2)

    def test_and_is_min(self):
        assert stl.robustness(conj(leaf(self.A), leaf(self.B)), self.X) == pytest.approx(0.2)

    def test_or_of_negation(self):
        e = disj(negate(leaf(self.A)), leaf(self.B))
        assert stl.robustness(e, self.X) == pytest.approx(max(-0.2, 0.7))

    def test_satisfies_strict_at_zero(self):
        atom = box_atom(1, (0.0, 0.0), (2.0, 2.0))
        assert stl.satisfies(leaf(atom), traj((0.5, 1.0)))
        assert not stl.satisfies(leaf(atom), traj((-0.1, 1.0)))
        boundary = traj((0.0, 1.0))
        assert stl.robustness(leaf(atom), boundary) == 0.0
        assert not stl.satisfies(leaf(atom), boundary)

    def test_double_negation_exact(self):
        rng = np.random.default_rng(7)
        atoms = unit_atoms(3)
        for _ in range(50):
            e = sample_random_expr(atoms, 4, rng)
            x = Trajectory(rng.uniform(-3, 3, (5, 2)), id="d")
            assert stl.robustness(negate(negate(e)), x) == stl.robustness(e, x)

    def test_de_morgan_exact(self):
        rng = np.random.default_rng(8)
        atoms = unit_atoms(3)
        for _ in range(50):
            a = sample_random_expr(atoms, 3, rng)
            b = sample_random_expr(atoms, 3, rng)
            x = Trajectory(rng.uniform(-3, 3, (5, 2)), id="d")
            lhs = stl.robustness(negate(conj(a, b)), x)
            rhs = stl.robustness(disj(negate(a), negate(b)), x)
            assert lhs == rhs

    def test_sign_consistency_property(self):
        rng = np.random.default_rng(9)
        atoms = unit_atoms(4)
        for _ in range(100):
            e = sample_random_expr(atoms, 4, rng)
            x = Trajectory(rng.uniform(-3, 3, (4, 2)), id="s")
            assert stl.satisfies(e, x) == (stl.robustness(e, x) > 0)


class TestExprStructure:
    def test_factories_flatten_nested_ops(self):
        a, b, c = (leaf(x) for x in unit_atoms(3))
        assert conj(conj(a, b), c) == conj(a, b, c)
        assert disj(a, disj(b, c)) == disj(a, b, c)
        assert conj(a) == a

    def test_arity_validation(self):
        a = leaf(unit_atoms(1)[0])
        with pytest.raises(ValueError):
            stl.StlExpr("and", (a,))
        with pytest.raises(ValueError):
            stl.StlExpr("not", ())
        with pytest.raises(ValueError):
            stl.StlExpr("bogus", (a, a))

    def test_size_counts_all_nodes(self):
        a, b, c = (leaf(x) for x in unit_atoms(3))
        assert stl.size(a) == 1
        assert stl.size(negate(a)) == 2
        assert stl.size(conj(disj(a, b), c)) == 5
        assert stl.size(TRUE) == 1

    def test_validate_expr_rejects_out_of_range(self):
        atoms = unit_atoms(3)
        e = disj(leaf(atoms[0]), leaf(atoms[2]))
        stl.validate_expr(e, 3)
        with pytest.raises(ValueError):
            stl.validate_expr(e, 2)


class TestTruthTable:
    def test_tautology_and_contradiction(self):
        (a,) = unit_atoms(1)
        assert stl.truth_table(disj(leaf(a), negate(leaf(a))), 1).to_list() == [True, True]
        assert stl.truth_table(conj(leaf(a), negate(leaf(a))), 1).to_list() == [False, False]

    def test_projection(self):
        a = unit_atoms(2)[0]
        table = stl.truth_table(leaf(a), 2)
        assert table.to_list() == [bool(assignment & 1) for assignment in range(4)]

    def test_capacity_error(self):
        (a,) = unit_atoms(1)
        with pytest.raises(CapacityError):
            stl.truth_table(leaf(a), 25)

    def test_brute_force_oracle(self):
        # Compare the bitset evaluation with direct recursive evaluation.
        rng = np.random.default_rng(12)
        atoms = unit_atoms(4)

        def evaluate(e, assignment):
            if e.op == "atom":
                return bool((assignment >> (e.atom.index - 1)) & 1)
            if e.op == "not":
                return not evaluate(e.children[0], assignment)
            if e.op == "and":
                return all(evaluate(c, assignment) for c in e.children)
            return any(evaluate(c, assignment) for c in e.children)

        for _ in range(100):
            e = sample_random_expr(atoms, 4, rng)
            table = stl.truth_table(e, 4)
            for assignment in range(16):
                assert table[assignment] == evaluate(e, assignment)


class TestCnf:
    def test_complement_law(self):
        (a,) = unit_atoms(1)
        assert stl.simplify_cnf(disj(leaf(a), negate(leaf(a)))) == TRUE
        assert stl.simplify_cnf(conj(leaf(a), negate(leaf(a)))) == FALSE

    def test_already_cnf_unchanged(self):
        a, b = (leaf(x) for x in unit_atoms(2))
        assert stl.simplify_cnf(conj(a, b)) == conj(a, b)

    def test_distribution(self):
        a, b, c = (leaf(x) for x in unit_atoms(3))
        got = stl.simplify_cnf(disj(a, conj(b, c)))
        assert got == conj(disj(a, b), disj(a, c))
        assert stl.truth_table(got, 3).bits == stl.truth_table(disj(a, conj(b, c)), 3).bits

    def test_idempotence(self):
        a = leaf(unit_atoms(1)[0])
        assert stl.simplify_cnf(conj(a, a)) == a

    def test_unsatisfiable_clause_set_collapses(self):
        # {1 or 2, not 1, not 2} has no complementary unit pair but is constant.
        a, b = (leaf(x) for x in unit_atoms(2))
        e = conj(disj(a, b), negate(a), negate(b))
        assert stl.simplify_cnf(e) == FALSE

    def test_absorption(self):
        a, b = (leaf(x) for x in unit_atoms(2))
        assert stl.simplify_cnf(conj(a, disj(a, b))) == a

    def test_penalties(self):
        a, b = (leaf(x) for x in unit_atoms(2))
        assert stl.length_penalty(conj(a, b)) == 3
        assert stl.trivial_penalty(conj(a, b)) == 0
        assert stl.trivial_penalty(disj(a, negate(a))) == 3
        assert stl.trivial_penalty(conj(a, a)) == 2

    def test_semantic_preservation_property(self):
        rng = np.random.default_rng(21)
        atoms = unit_atoms(6)
        for _ in range(300):
            e = sample_random_expr(atoms, 5, rng)
            cnf = stl.simplify_cnf(e)
            assert stl.truth_table(cnf, 6).bits == stl.truth_table(e, 6).bits

    def test_constancy_iff_constant_cnf_property(self):
        rng = np.random.default_rng(22)
        atoms = unit_atoms(6)
        seen_constant = 0
        for _ in range(300):
            e = sample_random_expr(atoms, 5, rng)
            constant = stl.truth_table(e, 6).is_constant
            seen_constant += constant
            assert constant == (stl.simplify_cnf(e) in (TRUE, FALSE))
            assert stl.is_trivial(e) == constant

    def test_output_is_cnf_shaped(self):
        def is_literal(e):
            return e.op == "atom" or (e.op == "not" and e.children[0].op == "atom")

        def is_clause(e):
            return is_literal(e) or (e.op == "or" and all(is_literal(c) for c in e.children))

        rng = np.random.default_rng(23)
        atoms = unit_atoms(5)
        for _ in range(200):
            cnf = stl.simplify_cnf(sample_random_expr(atoms, 5, rng))
            assert (
                cnf in (TRUE, FALSE)
                or is_clause(cnf)
                or (cnf.op == "and" and all(is_clause(c) for c in cnf.children))
            )


class TestSerialization:
    ATOMS = [
        box_atom(1, (0, 0), (1, 1), label="box1"),
        box_atom(2, (0, 0), (1, 2), label="box2"),
        box_atom(3, (0, 0), (1, 3), label="box3"),
    ]

    def test_example_form_round_trips_byte_exact(self):
        text = "(and (or (ev box2) (not (ev box1))) (ev box3))"
        expr = stl.parse_sexpr(text, self.ATOMS)
        assert stl.to_sexpr(expr) == text

    def test_random_round_trip(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            e = sample_random_expr(self.ATOMS, 5, rng)
            text = stl.to_sexpr(e)
            parsed = stl.parse_sexpr(text, self.ATOMS)
            assert parsed == e
            assert stl.to_sexpr(parsed) == text

    def test_constants_round_trip(self):
        assert stl.parse_sexpr("(and)", self.ATOMS) == TRUE
        assert stl.parse_sexpr("(or)", self.ATOMS) == FALSE
        assert stl.to_sexpr(TRUE) == "(and)"

    def test_parse_errors(self):
        with pytest.raises(SexprError):
            stl.parse_sexpr("(ev nosuchbox)", self.ATOMS)
        with pytest.raises(SexprError):
            stl.parse_sexpr("(ev box1) (ev box2)", self.ATOMS)
        with pytest.raises(ValueError):
            stl.parse_sexpr("(and (ev box1))", self.ATOMS)  # unary and
        with pytest.raises(SexprError):
            stl.parse_sexpr("(frobnicate (ev box1) (ev box2))", self.ATOMS)

    def test_pretty_listing(self):
        a1, a2, a3 = (leaf(a) for a in self.ATOMS)
        e = conj(disj(a2, negate(a1)), a3)
        assert stl.pretty(e) == (
            "and\n"
            "| or\n"
            "| | Eventually(box2)\n"
            "| | not\n"
            "| | | Eventually(box1)\n"
            "| Eventually(box3)"
        )

    def test_pretty_wrapper_for_always_kinds(self):
        flag = Atom(1, ALWAYS_FLAG, "is_ped", flag_component=2)
        box = box_atom(2, (0, 0), (1, 1), kind=ALWAYS_IN_BOX, label="zone")
        assert stl.pretty(conj(leaf(flag), leaf(box))) == (
            "and\n| Always(is_ped)\n| Always(zone)"
        )

    def test_label_validation(self):
        with pytest.raises(ValueError):
            box_atom(1, (0, 0), (1, 1), label="has space")
        with pytest.raises(ValueError):
            box_atom(1, (0, 0), (1, 1), label="par(en")
