"""Spatial branch-and-bound driver.

Each node runs: propagation -> LP -> (infeasibility analysis | separation
rounds) -> branching.  Conflict constraints only ever feed propagation.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from . import simplex
from .conflict import (
    ConflictConstraint,
    ConflictPool,
    FarkasProof,
    ProofError,
    analyze_propagation_conflict,
    build_proof,
    conflict_literals,
    lift_bucket,
    lift_local_proof,
    nogood_row,
    proof_antecedents,
    relax_to_global,
)
from .expr import Convexity, evaluate
from .model import Instance
from .propagation import DECISION, BoundChange, Disjunction, PropRow, Side, Trail, propagate_fixpoint
from .relaxation import CutPool, Scope, separate, underestimator
from .simplex import LpBasis, LpProblem, LpStatus

log = logging.getLogger(__name__)

INTEGRALITY_TOL = 1e-6
FEASIBILITY_TOL = 1e-6
SPATIAL_MARGIN = 0.2


class Setting(str, enum.Enum):
    NOCONFLICT = "noconflict"
    CONFGRAPH = "confgraph"
    DUALRAY = "dualray"
    DUALRAY_LOC = "dualray-loc"

    @classmethod
    def parse(cls, text: str) -> "Setting":
        aliases = {"none": cls.NOCONFLICT, "graph": cls.CONFGRAPH}
        return aliases.get(text) or cls(text)

    @property
    def graph_analysis(self) -> bool:
        return self is not Setting.NOCONFLICT


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    LIMIT = "limit"


@dataclass
class Settings:
    conflict: Setting = Setting.NOCONFLICT
    node_limit: int | None = None
    time_limit: float | None = None
    prune_tol: float = 1e-9
    separation_rounds: int = 5
    local_cuts: bool = True
    shrink_proofs: bool = True
    seed: int = 0


@dataclass
class Node:
    id: int
    parent: int | None
    depth: int
    path: tuple[int, ...]
    active_cuts: tuple[int, ...]
    lower_bound: float
    decision: tuple[int, Side, float] | None = None
    changes: list[BoundChange] = field(default_factory=list)
    box: tuple[np.ndarray, np.ndarray] | None = None
    lp_bound: float = -math.inf


@dataclass
class SolveStats:
    nodes: int = 0
    lp_solves: int = 0
    lp_iterations: int = 0
    lp_infeasible: int = 0
    prop_infeasible: int = 0
    cuts: int = 0
    confs_glb: int = 0
    confs_loc: int = 0
    graph_conflicts: int = 0
    graph_local_skipped: int = 0
    proofs_rejected: int = 0
    proofs_discarded: int = 0
    unresolved_lps: int = 0
    bound_drops: int = 0
    max_depth: int = 0
    lift_root: int = 0
    lift_half: int = 0
    lift_partial: int = 0
    lift_none: int = 0
    time: float = 0.0

    @property
    def lift_histogram(self) -> dict[str, int]:
        return {k: getattr(self, k) for k in ("lift_root", "lift_half", "lift_partial", "lift_none")}


@dataclass
class ProofRecord:
    """One analyzed infeasible LP, kept for inspection and testing."""

    node_id: int
    depth: int
    proof: FarkasProof
    relaxed: FarkasProof | None
    lifted: FarkasProof | None


@dataclass
class SolveResult:
    status: Status
    x: np.ndarray | None
    objective: float
    best_bound: float
    setting: Setting
    stats: SolveStats
    conflicts: list[ConflictConstraint] = field(default_factory=list)
    proofs: list[ProofRecord] = field(default_factory=list)
    infeasible_nodes: list[tuple[int, str]] = field(default_factory=list)
    boxes: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @property
    def nodes(self) -> int:
        return self.stats.nodes


class BranchAndBound:
    def __init__(self, inst: Instance, settings: Settings | None = None):
        self.inst = inst
        self.settings = settings or Settings()
        self.setting = self.settings.conflict
        n = inst.num_vars
        self.is_integer = inst.is_integer
        lo = inst.lower.copy()
        hi = inst.upper.copy()
        lo[self.is_integer] = np.ceil(lo[self.is_integer] - INTEGRALITY_TOL)
        hi[self.is_integer] = np.floor(hi[self.is_integer] + INTEGRALITY_TOL)
        self.root_lower, self.root_upper = lo, hi
        self.pool = CutPool()
        self.conflicts = ConflictPool()
        self.archive: dict[int, ConflictConstraint] = {}
        self.stats = SolveStats()
        self.nodes: dict[int, Node] = {}
        self.open_count: dict[int, int] = {}
        self.incumbent: np.ndarray | None = None
        self.incumbent_value = math.inf
        self.proven_infeasible = False
        self.incomplete = False
        self.proofs: list[ProofRecord] = []
        self.infeasible_nodes: list[tuple[int, str]] = []
        self._next_id = 0
        self._rows = [
            PropRow(("row", i), np.asarray(r.idx, dtype=int), np.asarray(r.coefs, dtype=float), r.rhs)
            for i, r in enumerate(inst.rows)
        ]
        self._cut_rows: dict[int, PropRow] = {}
        self._n = n

    # -- lookups used by conflict analysis -----------------------------------------

    def _lookup(self, key: Hashable):
        kind, ref = key
        if kind == "row":
            return self._rows[ref]
        if kind == "cut":
            return self._cut_row(ref)
        con = self.archive[ref]
        return con.row if con.row is not None else con.disjunction

    def _scope_of(self, key: Hashable) -> int:
        kind, ref = key
        if kind == "row":
            return 0
        if kind == "cut":
            cut = self.pool[ref]
            return 0 if self.pool.in_root_set(ref) or cut.scope is Scope.GLOBAL else cut.introduced_at_depth
        con = self.archive[ref]
        return 0 if con.scope is Scope.GLOBAL else con.valid_depth

    def _cut_row(self, cid: int) -> PropRow:
        row = self._cut_rows.get(cid)
        if row is None:
            cut = self.pool[cid]
            row = PropRow(("cut", cid), np.asarray(cut.idx, dtype=int), np.asarray(cut.coefs, dtype=float), cut.rhs)
            self._cut_rows[cid] = row
        return row

    # -- tree bookkeeping --------------------------------------------------------

    def _new_node(self, parent: Node | None, active, bound, decision=None) -> Node:
        nid = self._next_id
        self._next_id += 1
        if parent is None:
            node = Node(nid, None, 0, (nid,), tuple(active), bound, decision)
        else:
            node = Node(nid, parent.id, parent.depth + 1, parent.path + (nid,), tuple(active), bound, decision)
            if not set(node.active_cuts) >= set(parent.active_cuts):
                raise AssertionError("active cut sets must grow along a path")
        for a in node.path:
            self.open_count[a] = self.open_count.get(a, 0) + 1
        self.nodes[nid] = node
        return node

    def _close(self, node: Node) -> None:
        for a in node.path:
            self.open_count[a] -= 1

    def _subtree_alive(self, nid: int) -> bool:
        return self.open_count.get(nid, 0) > 0

    def _trail_for(self, node: Node) -> Trail:
        trail = Trail(self.root_lower, self.root_upper)
        for anc in node.path[:-1]:
            trail.push_level()
            for ch in self.nodes[anc].changes:
                trail.replay(ch)
        trail.push_level()
        if node.decision is not None:
            var, side, value = node.decision
            node.changes.append(trail.record(var, side, value, DECISION))
        return trail

    # -- per-node work -----------------------------------------------------------

    def _lp(self, active, lower, upper) -> LpProblem:
        inst = self.inst
        G, d = self.pool.matrix(active, self._n)
        A = np.vstack([inst.A, G]) if len(active) else inst.A
        b = np.concatenate([inst.b, d]) if len(active) else inst.b
        tags = [None] * len(inst.rows) + list(active)
        return LpProblem(A, b, inst.objective, lower, upper, tags)

    def _is_feasible(self, x) -> bool:
        xi = x[self.is_integer]
        if xi.size and np.max(np.abs(xi - np.round(xi))) > INTEGRALITY_TOL:
            return False
        return all(evaluate(c.expr, x) <= FEASIBILITY_TOL for c in self.inst.nonlinear)

    def _update_incumbent(self, x) -> None:
        cand = x.copy()
        cand[self.is_integer] = np.round(cand[self.is_integer])
        if self.inst.max_violation(cand) > FEASIBILITY_TOL:
            cand = x.copy()
        viol = self.inst.max_violation(cand)
        assert viol <= FEASIBILITY_TOL, f"incumbent violates the instance by {viol}"
        value = float(self.inst.objective @ cand)
        if value < self.incumbent_value:
            self.incumbent, self.incumbent_value = cand, value

    def _process(self, node: Node) -> list[Node]:
        inst = self.inst
        trail = self._trail_for(node)
        ancestors = set(node.path)
        applicable = self.conflicts.applicable(ancestors)
        rows = list(self._rows) + [self._cut_row(c) for c in node.active_cuts]
        rows += [c.row for c in applicable if c.row is not None]
        disj = [c.disjunction for c in applicable if c.disjunction is not None]
        res = propagate_fixpoint(trail, rows, disj, self.is_integer)
        node.changes.extend(res.changes)
        for key in res.used:
            if key[0] == "conf":
                self.conflicts.mark_used(key[1])
        node.box = (trail.lower.copy(), trail.upper.copy())
        if res.infeasible:
            self.stats.prop_infeasible += 1
            self.infeasible_nodes.append((node.id, "propagation"))
            if self.setting.graph_analysis:
                self._graph_conflict(trail, res.antecedents, res.conflict_key, node)
            return []

        lower, upper = node.box
        active = list(node.active_cuts)
        hint: LpBasis | None = None
        out = None
        for rnd in range(self.settings.separation_rounds + 1):
            lp = self._lp(active, lower, upper)
            out = simplex.solve(lp, hint)
            self.stats.lp_solves += 1
            self.stats.lp_iterations += out.iterations
            if out.status is LpStatus.INFEASIBLE:
                self.stats.lp_infeasible += 1
                self.infeasible_nodes.append((node.id, "lp"))
                self._lp_conflict(out.ray, node, trail, lower, upper)
                return []
            if out.status is not LpStatus.OPTIMAL:
                self.stats.unresolved_lps += 1
                log.warning("node %d: LP %s", node.id, out.status.value)
                break
            node.lp_bound = out.objective
            if out.objective < node.lower_bound - 1e-9:
                self.stats.bound_drops += 1
            if out.objective >= self.incumbent_value - self.settings.prune_tol:
                return []
            x = out.x
            if self._is_feasible(x):
                self._update_incumbent(x)
                return []
            if rnd == self.settings.separation_rounds:
                break
            new = separate(inst, x, lower, upper, self.pool, active, node.depth, node.id)
            if not self.settings.local_cuts:
                new = [c for c in new if c.scope is Scope.GLOBAL]
            if not new:
                break
            self.stats.cuts += len(new)
            m_old = lp.num_rows
            active.extend(c.cut_id for c in new)
            hint = LpBasis(out.basis.basis + tuple(range(self._n + m_old, self._n + m_old + len(new))),
                           out.basis.at_upper)
        if out is None or out.status is not LpStatus.OPTIMAL:
            children = self._branch_fallback(node, active, lower, upper)
            if not children:
                self.incomplete = True
            return children
        return self.branch(node, out.x, lower, upper, active, out.objective)

    # -- branching ---------------------------------------------------------------

    def branch(self, node: Node, x, lower, upper, active, bound) -> list[Node]:
        """Two children split on the most fractional integer, else spatially."""
        frac = np.abs(x - np.round(x))
        cand = [j for j in np.flatnonzero(self.is_integer) if frac[j] > INTEGRALITY_TOL]
        if cand:
            j = max(cand, key=lambda k: (min(x[k] - math.floor(x[k]), math.ceil(x[k]) - x[k]), -k))
            down, up = float(math.floor(x[j])), float(math.ceil(x[j]))
            return self._children(node, int(j), down, up, active, bound)
        j = self._spatial_candidate(x, lower, upper)
        if j is None and self._constant_violation(x, lower, upper):
            self.infeasible_nodes.append((node.id, "constant"))
            return []
        if j is None:
            self.incomplete = True
            log.warning("node %d: no branching candidate", node.id)
            return []
        return self._spatial_children(node, j, x[j], lower, upper, active, bound)

    def _constant_violation(self, x, lower, upper) -> bool:
        """Some violated constraint has a constant positive underestimator
        over the box (typically all its variables are fixed)."""
        for con in self.inst.nonlinear:
            if evaluate(con.expr, x) <= FEASIBILITY_TOL:
                continue
            est = underestimator(con, x, lower, upper)
            if est is not None and np.all(np.abs(est[0]) <= 1e-12) and est[1] > FEASIBILITY_TOL:
                return True
        return False

    def _spatial_candidate(self, x, lower, upper) -> int | None:
        def width(j):
            return upper[j] - lower[j]

        def ok(j):
            w = width(j)
            return w >= 1.0 if self.is_integer[j] else w > 1e-9

        for convex_pass in (False, True):
            cands = set()
            for con in self.inst.nonlinear:
                if (con.kind is Convexity.CONVEX) != convex_pass:
                    continue
                if evaluate(con.expr, x) <= FEASIBILITY_TOL:
                    continue
                vars_ = con.nonlinear_vars if convex_pass else con.nonconvex_vars
                cands.update(j for j in vars_ if ok(j))
            if cands:
                return min(cands, key=lambda j: (-width(j), j))
        return None

    def _spatial_children(self, node, j, xj, lower, upper, active, bound) -> list[Node]:
        lo, hi = lower[j], upper[j]
        w = hi - lo
        p = xj if not math.isfinite(w) else min(max(xj, lo + SPATIAL_MARGIN * w), hi - SPATIAL_MARGIN * w)
        if self.is_integer[j]:
            down = float(math.floor(p))
            if down >= hi:
                down = hi - 1.0
            return self._children(node, j, down, down + 1.0, active, bound)
        return self._children(node, j, float(p), float(p), active, bound)

    def _branch_fallback(self, node, active, lower, upper) -> list[Node]:
        widths = np.where(self.is_integer, upper - lower - 0.5, upper - lower)
        widths[~np.isfinite(widths)] = -1.0
        if widths.max() <= 1e-9:
            return []
        j = int(np.argmax(widths))
        mid = 0.5 * (lower[j] + upper[j])
        return self._spatial_children(node, j, mid, lower, upper, active, node.lower_bound)

    def _children(self, node, j, down, up, active, bound) -> list[Node]:
        left = self._new_node(node, active, bound, (j, Side.UPPER, down))
        right = self._new_node(node, active, bound, (j, Side.LOWER, up))
        return [left, right]

    # -- infeasibility analysis ---------------------------------------------------

    def _add_constraint(self, con: ConflictConstraint) -> None:
        self.archive[con.cid] = con
        if con.scope is Scope.GLOBAL:
            self.stats.confs_glb += 1
        else:
            self.stats.confs_loc += 1

    def _store_graph_conflict(self, trail: Trail, gc) -> None:
        if gc.proves_infeasible:
            self.proven_infeasible = True
            return
        if gc.scope is not Scope.GLOBAL:
            self.stats.graph_local_skipped += 1
            return
        if not gc.decisions:
            return
        lits = conflict_literals(gc.decisions, self.is_integer)
        self.stats.graph_conflicts += 1
        row = nogood_row(lits, self.root_lower, self.root_upper, self.is_integer)
        if row is not None:
            con = self.conflicts.add_row("graph", Scope.GLOBAL, *row)
        else:
            con = self.conflicts.add_disjunction("graph", Scope.GLOBAL, lits)
        self._add_constraint(con)

    def _graph_conflict(self, trail: Trail, antecedents, key, node: Node) -> None:
        gc = analyze_propagation_conflict(trail, antecedents, self._lookup, self._scope_of, key)
        self._store_graph_conflict(trail, gc)

    def _lp_conflict(self, ray, node: Node, trail: Trail, lower, upper) -> None:
        if self.setting is Setting.NOCONFLICT:
            return
        inst, pool = self.inst, self.pool
        try:
            proof = build_proof(ray, inst, pool, lower, upper, node.id, node.depth)
        except ProofError:
            self.stats.proofs_discarded += 1
            return
        relaxed = relax_to_global(proof, inst, pool, lower, upper)
        lifted = None
        if self.setting is Setting.DUALRAY_LOC:
            lifted = lift_local_proof(proof, node.path, inst, pool, lower, upper, self.settings.shrink_proofs)
            q = 0 if lifted.scope is Scope.GLOBAL else lifted.valid_depth
            setattr(self.stats, lift_bucket(q, node.depth), getattr(self.stats, lift_bucket(q, node.depth)) + 1)
        self.proofs.append(ProofRecord(node.id, node.depth, proof, relaxed, lifted))
        if relaxed is None:
            self.stats.proofs_rejected += 1

        if self.setting is Setting.CONFGRAPH:
            if relaxed is None:
                return
            if not relaxed.coefs.any():
                self.proven_infeasible = True
                return
            gc = analyze_propagation_conflict(trail, proof_antecedents(trail, relaxed), self._lookup, self._scope_of)
            self._store_graph_conflict(trail, gc)
            return

        if relaxed is not None:
            if not relaxed.coefs.any():
                self.proven_infeasible = True
                return
            idx = np.flatnonzero(relaxed.coefs)
            self._add_constraint(self.conflicts.add_row("dualray", Scope.GLOBAL, idx, relaxed.coefs[idx], relaxed.rhs))
        if lifted is not None and lifted.scope is Scope.LOCAL:
            q_node = self.nodes[lifted.valid_node]
            idx = np.flatnonzero(lifted.coefs)
            if not idx.size:
                return
            con = self.conflicts.add_row("dualray-loc", Scope.LOCAL, idx, lifted.coefs[idx], lifted.rhs,
                                         lifted.valid_depth, lifted.valid_node, q_node.box)
            self._add_constraint(con)

    # -- main loop ---------------------------------------------------------------

    def solve(self) -> SolveResult:
        start = time.perf_counter()
        st = self.settings
        root = self._new_node(None, (), -math.inf)
        queue: list[tuple[float, int, int]] = [(root.lower_bound, root.depth, root.id)]
        hit_limit = False
        while queue:
            if self.proven_infeasible:
                queue.clear()
                break
            if st.node_limit is not None and self.stats.nodes >= st.node_limit:
                hit_limit = True
                break
            if st.time_limit is not None and time.perf_counter() - start > st.time_limit:
                hit_limit = True
                break
            bound, _, nid = heapq.heappop(queue)
            node = self.nodes[nid]
            if bound >= self.incumbent_value - st.prune_tol:
                self._close(node)
                continue
            self.stats.nodes += 1
            self.stats.max_depth = max(self.stats.max_depth, node.depth)
            children = self._process(node)
            for child in children:
                heapq.heappush(queue, (child.lower_bound, child.depth, child.id))
            self._close(node)
            self.conflicts.tick()
            self.conflicts.manage(self._subtree_alive)
        self.stats.time = time.perf_counter() - start

        open_bounds = [self.nodes[nid].lower_bound for _, _, nid in queue]
        if hit_limit or self.incomplete:
            status = Status.LIMIT
            best = min(open_bounds + [self.incumbent_value]) if open_bounds else self.incumbent_value
        elif self.incumbent is not None:
            status = Status.OPTIMAL
            best = self.incumbent_value
        else:
            status = Status.INFEASIBLE
            best = math.inf
        return SolveResult(
            status=status,
            x=None if self.incumbent is None else self.incumbent.copy(),
            objective=self.incumbent_value,
            best_bound=best,
            setting=self.setting,
            stats=self.stats,
            conflicts=list(self.archive.values()),
            proofs=self.proofs,
            infeasible_nodes=self.infeasible_nodes,
            boxes={nid: n.box for nid, n in self.nodes.items() if n.box is not None},
        )


def solve(inst: Instance, settings: Settings | None = None, **kw) -> SolveResult:
    """Solve ``inst``; keyword arguments override fields of ``settings``."""
    settings = settings or Settings()
    if kw:
        settings = Settings(**{**settings.__dict__, **kw})
    if isinstance(settings.conflict, str):
        settings.conflict = Setting.parse(settings.conflict)
    return BranchAndBound(inst, settings).solve()
