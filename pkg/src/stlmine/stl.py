"""STL expression trees, robustness semantics, and Boolean simplification.

Expressions are built from a fixed bank of temporal atoms (box containment
and flag predicates over whole trajectories) combined with not/and/or.
Everything here is immutable and side-effect free, so expressions and
trajectories can be shared freely across threads.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

TRUTH_TABLE_LIMIT = 24

EVENTUALLY_IN_BOX = "eventually_in_box"
ALWAYS_IN_BOX = "always_in_box"
ALWAYS_FLAG = "always_flag"
ATOM_KINDS = (EVENTUALLY_IN_BOX, ALWAYS_IN_BOX, ALWAYS_FLAG)

OP_ATOM = "atom"
OP_NOT = "not"
OP_AND = "and"
OP_OR = "or"

_SEXPR_TAGS = {EVENTUALLY_IN_BOX: "ev", ALWAYS_IN_BOX: "alw", ALWAYS_FLAG: "flag"}
_SEXPR_KINDS = {v: k for k, v in _SEXPR_TAGS.items()}
_PRETTY_WRAPPERS = {
    EVENTUALLY_IN_BOX: "Eventually",
    ALWAYS_IN_BOX: "Always",
    ALWAYS_FLAG: "Always",
}
_LABEL_RE = re.compile(r"^[^\s()]+$")


class DimensionError(ValueError):
    """Trajectory state dimension is incompatible with an atom."""


class CapacityError(ValueError):
    """Requested operation exceeds a hard size limit."""


class SexprError(ValueError):
    """Malformed predicate S-expression."""


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned 2D box with corners low=(a1, b1) and high=(a2, b2)."""

    low: tuple[float, float]
    high: tuple[float, float]

    def __post_init__(self):
        low = (float(self.low[0]), float(self.low[1]))
        high = (float(self.high[0]), float(self.high[1]))
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)
        if not all(math.isfinite(v) for v in low + high):
            raise ValueError(f"box corners must be finite: {low}, {high}")
        if not (low[0] < high[0] and low[1] < high[1]):
            raise ValueError(f"degenerate box: low={low}, high={high}")

    def margins(self, x1, x2):
        """Signed containment margin, vectorized over coordinate arrays.

        The margin of a point is the smallest of its four halfspace margins,
        positive inside the box and negative outside.
        """
        a1, b1 = self.low
        a2, b2 = self.high
        m = np.minimum(x1 - a1, a2 - x1)
        m = np.minimum(m, x2 - b1)
        return np.minimum(m, b2 - x2)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fixed-length sequence of state vectors, shape (T, d)."""

    states: np.ndarray
    id: object = ""

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2 or states.shape[0] < 1 or states.shape[1] < 1:
            raise ValueError(f"states must be a (T, d) array, got shape {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ValueError("trajectory states must be finite")
        states = states.copy()
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def length(self):
        return self.states.shape[0]

    @property
    def dimension(self):
        return self.states.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.states, other.states)


@dataclass(frozen=True)
class Atom:
    """A small named temporal predicate used as a leaf in learned expressions.

    Box kinds evaluate the box containment margin of two position components
    over time (max over time for the eventually kind, min for always); the
    flag kind takes the min over time of one state component read as a
    signed margin.
    """

    index: int
    kind: str
    label: str
    region: BoxRegion | None = None
    flag_component: int | None = None
    position_components: tuple[int, int] = (0, 1)

    def __post_init__(self):
        if self.index < 1:
            raise ValueError(f"atom index must be >= 1, got {self.index}")
        if self.kind not in ATOM_KINDS:
            raise ValueError(f"unknown atom kind {self.kind!r}")
        if not _LABEL_RE.match(self.label):
            raise ValueError(f"atom label must be a single token, got {self.label!r}")
        if self.kind in (EVENTUALLY_IN_BOX, ALWAYS_IN_BOX):
            if self.region is None:
                raise ValueError(f"atom {self.label!r} of kind {self.kind} needs a region")
        elif self.flag_component is None:
            raise ValueError(f"atom {self.label!r} of kind {self.kind} needs a flag_component")


def atom_robustness(atom: Atom, x: Trajectory) -> float:
    """Robustness of a single atom on a trajectory."""
    if atom.kind == ALWAYS_FLAG:
        if atom.flag_component >= x.dimension:
            raise DimensionError(
                f"atom {atom.label!r} needs component {atom.flag_component}, "
                f"trajectory has dimension {x.dimension}"
            )
        return float(np.min(x.states[:, atom.flag_component]))
    c1, c2 = atom.position_components
    if max(c1, c2) >= x.dimension:
        raise DimensionError(
            f"atom {atom.label!r} needs components {atom.position_components}, "
            f"trajectory has dimension {x.dimension}"
        )
    margins = atom.region.margins(x.states[:, c1], x.states[:, c2])
    if atom.kind == EVENTUALLY_IN_BOX:
        return float(np.max(margins))
    return float(np.min(margins))


# --- Expression trees ------------------------------------------------------


@dataclass(frozen=True)
class StlExpr:
    """Expression tree node: an atom leaf, or not/and/or over children.

    And/or nodes are n-ary; a zero-child "and" is the constant true and a
    zero-child "or" the constant false. Use the leaf/negate/conj/disj
    factories, which flatten nested and/or so node counts are stable.
    """

    op: str
    children: tuple[StlExpr, ...] = ()
    atom: Atom | None = None

    def __post_init__(self):
        if self.op == OP_ATOM:
            if self.atom is None or self.children:
                raise ValueError("atom leaf needs an atom and no children")
        elif self.op == OP_NOT:
            if len(self.children) != 1 or self.atom is not None:
                raise ValueError("'not' takes exactly one child")
        elif self.op in (OP_AND, OP_OR):
            if len(self.children) == 1 or self.atom is not None:
                raise ValueError(f"{self.op!r} takes zero or at least two children")
        else:
            raise ValueError(f"unknown operator {self.op!r}")


TRUE = StlExpr(OP_AND)
FALSE = StlExpr(OP_OR)


def leaf(atom: Atom) -> StlExpr:
    return StlExpr(OP_ATOM, atom=atom)


def negate(e: StlExpr) -> StlExpr:
    return StlExpr(OP_NOT, (e,))


def _flatten(op, exprs):
    out = []
    for e in exprs:
        if e.op == op:
            out.extend(e.children)
        else:
            out.append(e)
    return tuple(out)


def conj(*exprs: StlExpr) -> StlExpr:
    kids = _flatten(OP_AND, exprs)
    if len(kids) == 1:
        return kids[0]
    return StlExpr(OP_AND, kids)


def disj(*exprs: StlExpr) -> StlExpr:
    kids = _flatten(OP_OR, exprs)
    if len(kids) == 1:
        return kids[0]
    return StlExpr(OP_OR, kids)


def size(e: StlExpr) -> int:
    """Total node count, leaves included. Constants count as one node."""
    return 1 + sum(size(c) for c in e.children)


def depth(e: StlExpr) -> int:
    if not e.children:
        return 1
    return 1 + max(depth(c) for c in e.children)


def expr_atoms(e: StlExpr) -> dict[int, Atom]:
    """Map of atom index to Atom over all leaves, rejecting index clashes."""
    found: dict[int, Atom] = {}
    stack = [e]
    while stack:
        node = stack.pop()
        if node.op == OP_ATOM:
            prev = found.setdefault(node.atom.index, node.atom)
            if prev != node.atom:
                raise ValueError(f"two distinct atoms share index {node.atom.index}")
        else:
            stack.extend(node.children)
    return found


def validate_expr(e: StlExpr, atom_count: int) -> None:
    """Raise if any leaf references an index outside [1, atom_count]."""
    for idx in expr_atoms(e):
        if idx > atom_count:
            raise ValueError(f"leaf references atom {idx}, bank has {atom_count}")


def robustness(e: StlExpr, x: Trajectory) -> float:
    """Quantitative robustness: negate for not, min for and, max for or."""
    if e.op == OP_ATOM:
        return atom_robustness(e.atom, x)
    if e.op == OP_NOT:
        return -robustness(e.children[0], x)
    values = [robustness(c, x) for c in e.children]
    if e.op == OP_AND:
        return min(values) if values else math.inf
    return max(values) if values else -math.inf


def satisfies(e: StlExpr, x: Trajectory) -> bool:
    """A trajectory satisfies an expression iff robustness is strictly positive."""
    return robustness(e, x) > 0


# --- Truth tables -----------------------------------------------------------


@dataclass(frozen=True)
class TruthTable:
    """Boolean value of an expression under each of the 2^M atom assignments.

    Stored as an integer bitset: bit a is the value under the assignment
    where atom i is true iff bit (i - 1) of a is set.
    """

    atom_count: int
    bits: int

    def __len__(self):
        return 1 << self.atom_count

    def __getitem__(self, assignment: int) -> bool:
        if not 0 <= assignment < len(self):
            raise IndexError(assignment)
        return bool((self.bits >> assignment) & 1)

    def to_list(self) -> list[bool]:
        return [self[a] for a in range(len(self))]

    @property
    def is_tautology(self) -> bool:
        return self.bits == (1 << len(self)) - 1

    @property
    def is_contradiction(self) -> bool:
        return self.bits == 0

    @property
    def is_constant(self) -> bool:
        return self.is_tautology or self.is_contradiction


def _variable_pattern(position: int, atom_count: int) -> int:
    # Repeating block of 2^position zeros then 2^position ones, grown by doubling.
    period = 1 << (position + 1)
    pattern = ((1 << (1 << position)) - 1) << (1 << position)
    width = period
    total = 1 << atom_count
    while width < total:
        pattern |= pattern << width
        width *= 2
    return pattern


def truth_table(e: StlExpr, atom_count: int) -> TruthTable:
    """Evaluate the expression under every true/false assignment to atoms."""
    if atom_count > TRUTH_TABLE_LIMIT:
        raise CapacityError(
            f"truth table over {atom_count} atoms exceeds the limit of {TRUTH_TABLE_LIMIT}"
        )
    validate_expr(e, atom_count)
    mask = (1 << (1 << atom_count)) - 1

    def walk(node: StlExpr) -> int:
        if node.op == OP_ATOM:
            return _variable_pattern(node.atom.index - 1, atom_count)
        if node.op == OP_NOT:
            return ~walk(node.children[0]) & mask
        if node.op == OP_AND:
            bits = mask
            for c in node.children:
                bits &= walk(c)
            return bits
        bits = 0
        for c in node.children:
            bits |= walk(c)
        return bits

    return TruthTable(atom_count, walk(e))


# --- Conjunctive normal form ------------------------------------------------


def _to_nnf(e: StlExpr, negated: bool) -> StlExpr:
    if e.op == OP_ATOM:
        return negate(e) if negated else e
    if e.op == OP_NOT:
        return _to_nnf(e.children[0], not negated)
    kids = tuple(_to_nnf(c, negated) for c in e.children)
    op = e.op
    if negated:
        op = OP_OR if op == OP_AND else OP_AND
    return StlExpr(op, kids)


def _clause_set(e: StlExpr) -> set[frozenset[int]]:
    # Clauses are frozensets of signed atom indices (+i literal, -i negated).
    if e.op == OP_ATOM:
        return {frozenset({e.atom.index})}
    if e.op == OP_NOT:
        return {frozenset({-e.children[0].atom.index})}
    if e.op == OP_AND:
        clauses: set[frozenset[int]] = set()
        for c in e.children:
            clauses |= _clause_set(c)
        return clauses
    # Or: distribute over the children's clause sets, dropping tautologies.
    result = {frozenset()}
    for c in e.children:
        child = _clause_set(c)
        merged = set()
        for r in result:
            for cl in child:
                u = r | cl
                if any(-lit in u for lit in u):
                    continue
                merged.add(u)
        result = merged
    return result


def _prune_subsumed(clauses: set[frozenset[int]]) -> list[frozenset[int]]:
    ordered = sorted(clauses, key=lambda c: (len(c), sorted((abs(l), l < 0) for l in c)))
    kept: list[frozenset[int]] = []
    for c in ordered:
        if not any(k <= c for k in kept):
            kept.append(c)
    return kept


def simplify_cnf(e: StlExpr) -> StlExpr:
    """Equivalent expression in conjunctive normal form.

    Constant expressions (over the atoms they reference) collapse to the
    zero-child and/or constants; everything else becomes an and of or-clauses
    with negation only on atoms, deduplicated and subsumption-pruned.
    """
    atoms = expr_atoms(e)
    if not atoms:
        return TRUE if _constant_value(e) else FALSE
    indices = sorted(atoms)
    if len(indices) <= TRUTH_TABLE_LIMIT:
        # Relabel referenced atoms onto positions 1..m for the constancy check.
        position = {idx: p + 1 for p, idx in enumerate(indices)}
        table = truth_table(_relabel(e, position), len(indices))
        if table.is_tautology:
            return TRUE
        if table.is_contradiction:
            return FALSE
    clauses = _prune_subsumed(_clause_set(_to_nnf(e, False)))
    if not clauses:
        return TRUE
    if any(not c for c in clauses):
        return FALSE

    def literal(lit: int) -> StlExpr:
        base = leaf(atoms[abs(lit)])
        return negate(base) if lit < 0 else base

    built = [disj(*(literal(l) for l in sorted(c, key=lambda l: (abs(l), l < 0)))) for c in clauses]
    return conj(*built)


def _relabel(e: StlExpr, position: dict[int, int]) -> StlExpr:
    if e.op == OP_ATOM:
        a = e.atom
        return leaf(
            Atom(
                position[a.index],
                a.kind,
                a.label,
                region=a.region,
                flag_component=a.flag_component,
                position_components=a.position_components,
            )
        )
    kids = tuple(_relabel(c, position) for c in e.children)
    return StlExpr(e.op, kids)


def _constant_value(e: StlExpr) -> bool:
    if e.op == OP_NOT:
        return not _constant_value(e.children[0])
    if e.op == OP_AND:
        return all(_constant_value(c) for c in e.children)
    if e.op == OP_OR:
        return any(_constant_value(c) for c in e.children)
    raise ValueError("expression references atoms")


def length_penalty(e: StlExpr) -> int:
    """Node count of the expression tree."""
    return size(e)


def trivial_penalty(e: StlExpr) -> int:
    """How many nodes CNF simplification removes, clamped at zero.

    Zero for irreducible expressions; large for redundant ones, and in
    particular for anything that collapses to a constant.
    """
    return max(0, size(e) - size(simplify_cnf(e)))


def is_trivial(e: StlExpr) -> bool:
    """True when the expression simplifies to the constant true or false."""
    atoms = expr_atoms(e)
    if not atoms:
        return True
    indices = sorted(atoms)
    position = {idx: p + 1 for p, idx in enumerate(indices)}
    return truth_table(_relabel(e, position), len(indices)).is_constant


# --- Serialization ----------------------------------------------------------


def to_sexpr(e: StlExpr) -> str:
    """Parenthesized text form, e.g. ``(and (ev box2) (not (ev box1)))``."""
    if e.op == OP_ATOM:
        return f"({_SEXPR_TAGS[e.atom.kind]} {e.atom.label})"
    inner = " ".join(to_sexpr(c) for c in e.children)
    return f"({e.op} {inner})" if inner else f"({e.op})"


def _tokenize(text: str) -> list[str]:
    return re.findall(r"\(|\)|[^\s()]+", text)


def parse_sexpr(text: str, atoms: list[Atom] | tuple[Atom, ...]) -> StlExpr:
    """Parse the S-expression form back into a tree over a known atom bank."""
    by_key = {(a.kind, a.label): a for a in atoms}
    if len(by_key) != len(atoms):
        raise ValueError("atom bank has duplicate (kind, label) pairs")
    tokens = _tokenize(text)
    pos = 0

    def expect(tok):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != tok:
            raise SexprError(f"expected {tok!r} at token {pos} in {text!r}")
        pos += 1

    def parse_node() -> StlExpr:
        nonlocal pos
        expect("(")
        if pos >= len(tokens):
            raise SexprError(f"unterminated expression in {text!r}")
        head = tokens[pos]
        pos += 1
        if head in _SEXPR_KINDS:
            if pos >= len(tokens) or tokens[pos] in "()":
                raise SexprError(f"atom tag {head!r} needs a label")
            label = tokens[pos]
            pos += 1
            expect(")")
            atom = by_key.get((_SEXPR_KINDS[head], label))
            if atom is None:
                raise SexprError(f"unknown atom ({head} {label})")
            return leaf(atom)
        if head == OP_NOT:
            child = parse_node()
            expect(")")
            return negate(child)
        if head in (OP_AND, OP_OR):
            kids = []
            while pos < len(tokens) and tokens[pos] == "(":
                kids.append(parse_node())
            expect(")")
            return StlExpr(head, tuple(kids))
        raise SexprError(f"unknown operator {head!r}")

    node = parse_node()
    if pos != len(tokens):
        raise SexprError(f"trailing tokens after expression in {text!r}")
    return node


def pretty(e: StlExpr) -> str:
    """Indented tree listing, one node per line, children marked with '| '."""
    lines: list[str] = []

    def walk(node: StlExpr, depth_: int):
        prefix = "| " * depth_
        if node.op == OP_ATOM:
            wrapper = _PRETTY_WRAPPERS[node.atom.kind]
            lines.append(f"{prefix}{wrapper}({node.atom.label})")
            return
        if node.op in (OP_AND, OP_OR) and not node.children:
            lines.append(f"{prefix}{'true' if node.op == OP_AND else 'false'}")
            return
        lines.append(f"{prefix}{node.op}")
        for c in node.children:
            walk(c, depth_ + 1)

    walk(e, 0)
    return "\n".join(lines)
