"""Infeasibility analysis: Farkas proofs from dual rays, their relaxation to
root cuts, lifting of locally valid proofs to ancestors, decision-cut
analysis of propagation conflicts, and the conflict constraint pool."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np

from .model import Instance
from .propagation import (
    BoundChange,
    Disjunction,
    Literal,
    PropRow,
    Side,
    Trail,
    disjunction_antecedents,
    row_antecedents,
)
from .relaxation import CutPool, Scope
from .simplex import CERT_TOL, DualRay, min_activity_term

MAX_POOL_ROWS = 10_000
MAX_UNUSED_AGE = 10_000


class ProofError(ValueError):
    """A ray that fails re-validation; the proof is discarded."""


@dataclass
class FarkasProof:
    """Aggregated row ``coefs . x >= rhs`` with its multipliers.

    ``value`` is the certificate ``y'b + w'd + r'{l, u}`` at the creating
    node's box.  For local scope, ``valid_depth``/``valid_node`` identify the
    ancestor whose subtree the row is valid for.
    """

    y: np.ndarray
    w: dict[int, float]
    r: np.ndarray
    coefs: np.ndarray
    rhs: float
    value: float
    node_id: int
    depth: int
    scope: Scope = Scope.LOCAL
    valid_depth: int | None = None
    valid_node: int | None = None

    @property
    def uses_cuts(self) -> bool:
        return any(v > 0.0 for v in self.w.values())

    def as_row(self, key) -> PropRow:
        idx = np.flatnonzero(self.coefs)
        return PropRow(key, idx, self.coefs[idx], self.rhs)


def aggregate(inst: Instance, pool: CutPool, y, w: Mapping[int, float]) -> tuple[np.ndarray, float]:
    """``(y'A + w'G, y'b + w'd)`` accumulated from the original row data."""
    y = np.asarray(y, dtype=float)
    coefs = y @ inst.A if len(inst.rows) else np.zeros(inst.num_vars)
    rhs = float(y @ inst.b) if len(inst.rows) else 0.0
    coefs = np.array(coefs, dtype=float)
    for cid, val in w.items():
        if val == 0.0:
            continue
        cut = pool[cid]
        for j, c in zip(cut.idx, cut.coefs):
            coefs[j] += val * c
        rhs += val * cut.rhs
    return coefs, rhs


def proof_value(coefs: np.ndarray, rhs: float, lower, upper) -> float:
    """Certificate of the row ``coefs . x >= rhs`` over a box (ray case,
    ``r = -coefs``)."""
    r = -np.asarray(coefs, dtype=float)
    r[np.abs(r) <= 1e-12] = 0.0
    return rhs + min_activity_term(r, lower, upper)


def build_proof(ray: DualRay, inst: Instance, pool: CutPool, lower, upper,
                node_id: int = 0, depth: int = 0) -> FarkasProof:
    if np.any(np.asarray(ray.y) < 0.0) or any(v < 0.0 for v in ray.w.values()):
        raise ProofError("negative multiplier")
    w = {cid: float(v) for cid, v in ray.w.items() if v > 0.0}
    coefs, rhs = aggregate(inst, pool, ray.y, w)
    coefs[np.abs(coefs) <= 1e-12] = 0.0
    value = proof_value(coefs, rhs, lower, upper)
    if not value > CERT_TOL:
        raise ProofError(f"certificate {value:.3g} does not exceed {CERT_TOL}")
    return FarkasProof(np.asarray(ray.y, dtype=float).copy(), w, -coefs, coefs, rhs, value,
                       node_id, depth, Scope.LOCAL, depth, node_id)


def _restricted(proof: FarkasProof, inst: Instance, pool: CutPool, keep: Callable[[int], bool],
                lower, upper) -> FarkasProof:
    w = {cid: v for cid, v in proof.w.items() if keep(cid)}
    coefs, rhs = aggregate(inst, pool, proof.y, w)
    coefs[np.abs(coefs) <= 1e-12] = 0.0
    value = proof_value(coefs, rhs, lower, upper)
    return replace(proof, w=w, r=-coefs, coefs=coefs, rhs=rhs, value=value)


def relax_to_global(proof: FarkasProof, inst: Instance, pool: CutPool, lower, upper) -> FarkasProof | None:
    """Drop every cut multiplier outside the root set and re-evaluate at the
    creating node's box; ``None`` when the certificate no longer holds."""
    relaxed = _restricted(proof, inst, pool, pool.in_root_set, lower, upper)
    if not relaxed.value > CERT_TOL:
        return None
    return replace(relaxed, scope=Scope.GLOBAL, valid_depth=0, valid_node=None)


def lift_local_proof(proof: FarkasProof, path: Sequence[int], inst: Instance, pool: CutPool,
                     lower, upper, shrink: bool = True) -> FarkasProof:
    """Scope ``proof`` to the shallowest ancestor on ``path`` (node ids by
    depth) at which every cut it uses was already active.

    With ``shrink``, cuts from the deepest introduction levels are dropped one
    level at a time as long as the certificate at ``(lower, upper)`` stays
    positive, which can move the ancestor further up.
    """
    used = {cid: v for cid, v in proof.w.items() if v > 0.0}
    current = replace(proof, w=used)
    if shrink:
        levels = sorted({pool[cid].introduced_at_depth for cid in used}, reverse=True)
        for level in levels:
            if level == 0:
                break
            trial = _restricted(current, inst, pool, lambda cid, lv=level: pool[cid].introduced_at_depth < lv,
                                lower, upper)
            if not trial.value > CERT_TOL:
                break
            current = trial
    q = max((pool[cid].introduced_at_depth for cid in current.w), default=0)
    if q == 0:
        relaxed = relax_to_global(current, inst, pool, lower, upper)
        if relaxed is not None:
            return relaxed
    return replace(current, scope=Scope.LOCAL, valid_depth=q, valid_node=path[q])


def lift_bucket(q: int, s: int) -> str:
    if q == 0:
        return "lift_root"
    if q <= s // 2:
        return "lift_half"
    if q < s:
        return "lift_partial"
    return "lift_none"


# -- conflict graph (decision cut) ------------------------------------------------

@dataclass
class GraphConflict:
    """Result of decision-cut analysis.  ``decisions`` empty with global
    scope means the problem itself is infeasible."""

    decisions: list[BoundChange]
    scope: Scope
    valid_depth: int
    reasons: set

    @property
    def proves_infeasible(self) -> bool:
        return not self.decisions and self.scope is Scope.GLOBAL


def analyze_propagation_conflict(
    trail: Trail,
    antecedents: Iterable[BoundChange],
    lookup: Callable[[Hashable], PropRow | Disjunction],
    scope_of: Callable[[Hashable], int],
    conflict_key: Hashable | None = None,
) -> GraphConflict:
    """Walk reasons back from the conflicting bounds to branching decisions.

    ``scope_of(key)`` gives ``0`` for globally valid reasons and the validity
    depth otherwise.
    """
    queue = list(antecedents)
    seen: set[int] = set()
    decisions: dict[tuple[int, Side], BoundChange] = {}
    reasons: set = set()
    if conflict_key is not None:
        reasons.add(conflict_key)
    while queue:
        ch = queue.pop()
        if ch.pos in seen:
            continue
        seen.add(ch.pos)
        if ch.is_decision:
            key = (ch.var, ch.side)
            prev = decisions.get(key)
            tighter = prev is None or (ch.new < prev.new if ch.side is Side.UPPER else ch.new > prev.new)
            if tighter:
                decisions[key] = ch
            continue
        reasons.add(ch.reason)
        src = lookup(ch.reason)
        if isinstance(src, Disjunction):
            queue.extend(disjunction_antecedents(trail, src, ch.pos, skip_var=ch.var))
        else:
            queue.extend(row_antecedents(trail, src, ch.pos, skip_var=ch.var))
    depth = max((scope_of(k) for k in reasons), default=0)
    scope = Scope.GLOBAL if depth == 0 else Scope.LOCAL
    ordered = sorted(decisions.values(), key=lambda c: c.pos)
    return GraphConflict(ordered, scope, depth, reasons)


def proof_antecedents(trail: Trail, proof: FarkasProof) -> list[BoundChange]:
    """Bound changes behind the box terms ``r'{l, u}`` of a proof."""
    out = []
    for j in np.flatnonzero(proof.r):
        side = Side.LOWER if proof.r[j] > 0 else Side.UPPER
        ch = trail.last_change(int(j), side)
        if ch is not None:
            out.append(ch)
    return out


def conflict_literals(decisions: Sequence[BoundChange], is_integer) -> tuple[Literal, ...]:
    """Negations of the decisions: at least one must hold in any solution.
    Continuous negations are closed (weakened) so they stay valid."""
    lits = []
    for d in decisions:
        integer = bool(is_integer[d.var])
        if d.side is Side.UPPER:
            lits.append(Literal(d.var, Side.LOWER, d.new + 1.0 if integer else d.new))
        else:
            lits.append(Literal(d.var, Side.UPPER, d.new - 1.0 if integer else d.new))
    return tuple(lits)


def nogood_row(literals: Sequence[Literal], lower, upper, is_integer) -> tuple[np.ndarray, np.ndarray, float] | None:
    """Linear form of a disjunction over binary literals, or ``None`` if some
    literal is not on a binary variable."""
    idx, coefs, rhs = [], [], 1.0
    for lit in literals:
        j = lit.var
        if not (is_integer[j] and lower[j] >= 0.0 and upper[j] <= 1.0):
            return None
        if lit.side is Side.LOWER and lit.value == 1.0:
            idx.append(j)
            coefs.append(1.0)
        elif lit.side is Side.UPPER and lit.value == 0.0:
            idx.append(j)
            coefs.append(-1.0)
            rhs -= 1.0
        else:
            return None
    if len(set(idx)) != len(idx):
        return None
    return np.array(idx, dtype=int), np.array(coefs), rhs


# -- conflict constraints ---------------------------------------------------------

@dataclass
class ConflictConstraint:
    """A learned constraint used in propagation only.

    Exactly one of ``row`` / ``disjunction`` is set.  ``box`` is the snapshot
    of the validity node's bounds for local constraints.
    """

    cid: int
    origin: str
    scope: Scope
    row: PropRow | None = None
    disjunction: Disjunction | None = None
    valid_depth: int = 0
    valid_node: int | None = None
    box: tuple[np.ndarray, np.ndarray] | None = None
    created_at: int = 0
    last_used: int = 0
    uses: int = 0

    @property
    def key(self):
        return ("conf", self.cid)

    def is_satisfied(self, x, tol: float = 1e-6) -> bool:
        if self.row is not None:
            return float(self.row.coefs @ np.asarray(x)[self.row.idx]) >= self.row.rhs - tol
        lo = hi = np.asarray(x, dtype=float)
        return any(lit.is_true(lo, hi) or abs(x[lit.var] - lit.value) <= tol for lit in self.disjunction.literals)


@dataclass
class ConflictPool:
    """Aging and eviction of conflict constraints."""

    max_rows: int = MAX_POOL_ROWS
    max_age: int = MAX_UNUSED_AGE
    constraints: dict[int, ConflictConstraint] = field(default_factory=dict)
    next_id: int = 0
    clock: int = 0

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints.values())

    def add_row(self, origin: str, scope: Scope, idx, coefs, rhs, valid_depth: int = 0,
                valid_node: int | None = None, box=None) -> ConflictConstraint:
        cid = self.next_id
        row = PropRow(("conf", cid), np.asarray(idx, dtype=int), np.asarray(coefs, dtype=float), float(rhs))
        return self._insert(ConflictConstraint(cid, origin, scope, row=row, valid_depth=valid_depth,
                                               valid_node=valid_node, box=box))

    def add_disjunction(self, origin: str, scope: Scope, literals, valid_depth: int = 0,
                        valid_node: int | None = None, box=None) -> ConflictConstraint:
        cid = self.next_id
        disj = Disjunction(("conf", cid), tuple(literals))
        return self._insert(ConflictConstraint(cid, origin, scope, disjunction=disj, valid_depth=valid_depth,
                                               valid_node=valid_node, box=box))

    def _insert(self, con: ConflictConstraint) -> ConflictConstraint:
        self.next_id += 1
        con.created_at = con.last_used = self.clock
        if len(self.constraints) >= self.max_rows:
            self._evict_one()
        self.constraints[con.cid] = con
        return con

    def _evict_one(self) -> None:
        victim = min(self.constraints.values(), key=lambda c: (c.last_used, c.cid))
        del self.constraints[victim.cid]

    def mark_used(self, cid: int) -> None:
        con = self.constraints.get(cid)
        if con is not None:
            con.last_used = self.clock
            con.uses += 1

    def age(self, con: ConflictConstraint) -> int:
        return self.clock - con.last_used

    def tick(self) -> None:
        """Advance the node clock by one processed node."""
        self.clock += 1

    def manage(self, subtree_alive: Callable[[int], bool] | None = None) -> list[int]:
        """Drop constraints unused for ``max_age`` nodes and local ones whose
        subtree has been left; returns the retained ids."""
        drop = [c.cid for c in self.constraints.values() if self.age(c) >= self.max_age]
        if subtree_alive is not None:
            drop += [
                c.cid for c in self.constraints.values()
                if c.scope is Scope.LOCAL and c.valid_node is not None and not subtree_alive(c.valid_node)
            ]
        for cid in set(drop):
            self.constraints.pop(cid, None)
        return sorted(self.constraints)

    def applicable(self, ancestors: set[int]) -> list[ConflictConstraint]:
        return [
            c for c in self.constraints.values()
            if c.scope is Scope.GLOBAL or c.valid_node is None or c.valid_node in ancestors
        ]
