"""Activity-based bound propagation with a reason-annotated trail."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

DEDUCTION_TOL = 1e-6
INFEASIBILITY_TOL = 1e-6
MAX_SWEEPS = 100

DECISION = ("decision", None)


class Side(str, enum.Enum):
    LOWER = "lower"
    UPPER = "upper"

    @property
    def other(self) -> "Side":
        return Side.UPPER if self is Side.LOWER else Side.LOWER


@dataclass(frozen=True)
class BoundChange:
    """One tightening of ``x[var]`` on ``side``.

    ``reason`` is ``DECISION`` for branching, otherwise the key of the row,
    cut or conflict constraint that implied it.
    """

    var: int
    side: Side
    old: float
    new: float
    reason: tuple = DECISION
    pos: int = -1
    depth: int = 0

    @property
    def is_decision(self) -> bool:
        return self.reason == DECISION


@dataclass(frozen=True)
class PropRow:
    """A ``>=`` row taking part in propagation."""

    key: Hashable
    idx: np.ndarray
    coefs: np.ndarray
    rhs: float

    @classmethod
    def from_sparse(cls, key, idx, coefs, rhs) -> "PropRow":
        return cls(key, np.asarray(idx, dtype=int), np.asarray(coefs, dtype=float), float(rhs))


@dataclass(frozen=True)
class Literal:
    """``x[var] >= value`` when ``side`` is LOWER, ``x[var] <= value`` otherwise."""

    var: int
    side: Side
    value: float

    def is_false(self, lower, upper) -> bool:
        if self.side is Side.LOWER:
            return upper[self.var] < self.value - 1e-9
        return lower[self.var] > self.value + 1e-9

    def is_true(self, lower, upper) -> bool:
        if self.side is Side.LOWER:
            return lower[self.var] >= self.value - 1e-9
        return upper[self.var] <= self.value + 1e-9

    @property
    def falsifying_side(self) -> Side:
        """The bound of ``var`` whose tightening makes the literal false."""
        return self.side.other


@dataclass(frozen=True)
class Disjunction:
    """At least one literal must hold."""

    key: Hashable
    literals: tuple[Literal, ...]


class Infeasible:
    """Marker returned by :func:`propagate_row` for a row that cannot be met."""

    def __repr__(self):
        return "INFEASIBLE"

    def __bool__(self):
        return False


INFEASIBLE = Infeasible()


def _round(value: float, side: Side, integer: bool) -> float:
    if not integer:
        return value
    if side is Side.LOWER:
        return float(math.ceil(value - DEDUCTION_TOL))
    return float(math.floor(value + DEDUCTION_TOL))


def propagate_row(row: PropRow, lower, upper, is_integer=None):
    """Bounds implied by ``row`` over the box, or ``INFEASIBLE`` when its
    maximal activity falls short of the right-hand side.

    Returned changes carry the row key as reason but no trail position.
    """
    idx, coefs = row.idx, row.coefs
    with np.errstate(invalid="ignore"):
        contrib = np.where(coefs > 0, coefs * upper[idx], coefs * lower[idx]) if idx.size else np.zeros(0)
    contrib[coefs == 0] = 0.0
    inf_mask = np.isinf(contrib)
    n_inf = int(inf_mask.sum())
    finite_sum = float(contrib[~inf_mask].sum())
    if n_inf == 0 and finite_sum < row.rhs - INFEASIBILITY_TOL:
        return INFEASIBLE
    if n_inf > 1:
        return []
    out: list[BoundChange] = []
    for k, j in enumerate(idx):
        a = coefs[k]
        if a == 0.0:
            continue
        if inf_mask[k]:
            residual = finite_sum
        elif n_inf:
            continue
        else:
            residual = finite_sum - contrib[k]
        bound = (row.rhs - residual) / a
        integer = bool(is_integer[j]) if is_integer is not None else False
        if a > 0:
            new = _round(bound, Side.LOWER, integer)
            if new > lower[j] + DEDUCTION_TOL:
                out.append(BoundChange(int(j), Side.LOWER, float(lower[j]), new, row.key))
        else:
            new = _round(bound, Side.UPPER, integer)
            if new < upper[j] - DEDUCTION_TOL:
                out.append(BoundChange(int(j), Side.UPPER, float(upper[j]), new, row.key))
    return out


@dataclass
class Trail:
    """Bound changes in the order they were made, with a marker per depth so
    that popping a level restores the bounds exactly."""

    lower: np.ndarray
    upper: np.ndarray
    changes: list[BoundChange] = field(default_factory=list)
    markers: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.lower = np.array(self.lower, dtype=float)
        self.upper = np.array(self.upper, dtype=float)
        self._history: dict[tuple[int, Side], list[int]] = {}

    @property
    def depth(self) -> int:
        return len(self.markers)

    def push_level(self) -> None:
        self.markers.append(len(self.changes))

    def pop_to(self, depth: int) -> None:
        """Undo every change made at levels deeper than ``depth``."""
        while len(self.markers) > depth:
            start = self.markers.pop()
            while len(self.changes) > start:
                ch = self.changes.pop()
                self._history[(ch.var, ch.side)].pop()
                bounds = self.lower if ch.side is Side.LOWER else self.upper
                bounds[ch.var] = ch.old

    def record(self, var: int, side: Side, new: float, reason=DECISION) -> BoundChange:
        bounds = self.lower if side is Side.LOWER else self.upper
        old = float(bounds[var])
        tighter = new > old if side is Side.LOWER else new < old
        if not tighter:
            raise ValueError(f"bound change on x{var} ({side.value}) does not tighten {old} -> {new}")
        ch = BoundChange(var, side, old, float(new), reason, len(self.changes), max(self.depth - 1, 0))
        self.changes.append(ch)
        self._history.setdefault((var, side), []).append(ch.pos)
        bounds[var] = new
        return ch

    def replay(self, ch: BoundChange) -> BoundChange:
        return self.record(ch.var, ch.side, ch.new, ch.reason)

    def last_change(self, var: int, side: Side, before: int | None = None) -> BoundChange | None:
        """Latest change of the bound strictly before trail position ``before``."""
        positions = self._history.get((var, side), [])
        for pos in reversed(positions):
            if before is None or pos < before:
                return self.changes[pos]
        return None

    def level_changes(self, depth: int) -> list[BoundChange]:
        start = self.markers[depth]
        end = self.markers[depth + 1] if depth + 1 < len(self.markers) else len(self.changes)
        return self.changes[start:end]


@dataclass
class PropagationResult:
    infeasible: bool = False
    conflict_key: Hashable | None = None
    antecedents: list[BoundChange] = field(default_factory=list)
    changes: list[BoundChange] = field(default_factory=list)
    used: set = field(default_factory=set)
    sweeps: int = 0

    @property
    def ok(self) -> bool:
        return not self.infeasible


def row_antecedents(trail: Trail, row: PropRow, before: int | None, skip_var: int | None = None) -> list[BoundChange]:
    """Bound changes behind the maximal activity of ``row`` at a trail point."""
    out = []
    for j, a in zip(row.idx, row.coefs):
        if j == skip_var or a == 0.0:
            continue
        side = Side.UPPER if a > 0 else Side.LOWER
        ch = trail.last_change(int(j), side, before)
        if ch is not None:
            out.append(ch)
    return out


def disjunction_antecedents(trail: Trail, disj: Disjunction, before: int | None, skip_var: int | None = None):
    out = []
    for lit in disj.literals:
        if lit.var == skip_var:
            continue
        ch = trail.last_change(lit.var, lit.falsifying_side, before)
        if ch is not None:
            out.append(ch)
    return out


def _check_cross(trail: Trail, ch: BoundChange) -> list[BoundChange] | None:
    lo, hi = trail.lower[ch.var], trail.upper[ch.var]
    if lo <= hi + 1e-9:
        return None
    other = trail.last_change(ch.var, ch.side.other)
    return [ch] + ([other] if other is not None else [])


def propagate_fixpoint(trail: Trail, rows: Sequence[PropRow], disjunctions: Sequence[Disjunction] = (),
                       is_integer=None, max_sweeps: int = MAX_SWEEPS) -> PropagationResult:
    """Sweep all rows and disjunctions until nothing changes, a bound pair
    crosses, or ``max_sweeps`` is reached (sound but possibly incomplete)."""
    result = PropagationResult()
    for sweep in range(max_sweeps):
        result.sweeps = sweep + 1
        changed = False
        for row in rows:
            deductions = propagate_row(row, trail.lower, trail.upper, is_integer)
            if deductions is INFEASIBLE:
                result.infeasible = True
                result.conflict_key = row.key
                result.antecedents = row_antecedents(trail, row, None)
                result.used.add(row.key)
                return result
            for d in deductions:
                bounds = trail.lower if d.side is Side.LOWER else trail.upper
                if (d.side is Side.LOWER and d.new <= bounds[d.var] + DEDUCTION_TOL) or (
                    d.side is Side.UPPER and d.new >= bounds[d.var] - DEDUCTION_TOL
                ):
                    continue
                ch = trail.record(d.var, d.side, d.new, row.key)
                result.changes.append(ch)
                result.used.add(row.key)
                changed = True
                crossing = _check_cross(trail, ch)
                if crossing is not None:
                    result.infeasible = True
                    result.conflict_key = row.key
                    result.antecedents = crossing
                    return result
        for disj in disjunctions:
            open_lits = [lit for lit in disj.literals if not lit.is_false(trail.lower, trail.upper)]
            if not open_lits:
                result.infeasible = True
                result.conflict_key = disj.key
                result.antecedents = disjunction_antecedents(trail, disj, None)
                result.used.add(disj.key)
                return result
            if len(open_lits) == 1 and not open_lits[0].is_true(trail.lower, trail.upper):
                lit = open_lits[0]
                value = _round(lit.value, lit.side, bool(is_integer[lit.var]) if is_integer is not None else False)
                ch = trail.record(lit.var, lit.side, value, disj.key)
                result.changes.append(ch)
                result.used.add(disj.key)
                changed = True
                crossing = _check_cross(trail, ch)
                if crossing is not None:
                    result.infeasible = True
                    result.conflict_key = disj.key
                    result.antecedents = crossing
                    return result
        if not changed:
            break
    return result
