"""Dense bounded-variable primal simplex for ``min c'x, Ax >= b, l <= x <= u``.

Rows are turned into equalities ``Ax - s = 0`` with slack bounds
``b <= s < inf``.  Phase 1 minimizes the summed bound violation of the basic
variables; when its minimum stays positive, the Phase-1 duals are a Farkas
ray ``(y, w, r)`` with ``y, w >= 0`` and ``r = -(y'A + w'G)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

FEAS_TOL = 1e-7
CERT_TOL = 1e-6
PIVOT_TOL = 1e-9
DUAL_TOL = 1e-9
BLAND_AFTER = 1000
REFACTOR_EVERY = 100


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"
    NUMERICAL = "numerical"


@dataclass
class LpProblem:
    """Rows ``A x >= rhs``; ``tags[i]`` is ``None`` for model rows and the
    cut id for linearization rows."""

    A: np.ndarray
    rhs: np.ndarray
    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    tags: list[Hashable | None] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not self.tags:
            self.tags = [None] * self.A.shape[0]
        if len(self.tags) != self.A.shape[0] or self.rhs.shape[0] != self.A.shape[0]:
            raise ValueError("row data and tags disagree in length")
        if n == 0:
            raise ValueError("LP needs at least one variable")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    @property
    def num_cols(self) -> int:
        return self.c.shape[0]

    @property
    def global_rows(self) -> np.ndarray:
        return np.array([t is None for t in self.tags], dtype=bool)


@dataclass
class DualRay:
    """Farkas multipliers: ``y`` on model rows (in order), ``w`` on cut rows
    keyed by cut id, ``r`` the reduced costs of the bound constraints."""

    y: np.ndarray
    w: dict
    r: np.ndarray


@dataclass
class LpBasis:
    basis: tuple[int, ...]
    at_upper: frozenset[int]


@dataclass
class LpOutcome:
    status: LpStatus
    x: np.ndarray | None = None
    objective: float = math.nan
    ray: DualRay | None = None
    certificate: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    basis: LpBasis | None = None

    @property
    def resolved(self) -> bool:
        return self.status in (LpStatus.OPTIMAL, LpStatus.INFEASIBLE, LpStatus.UNBOUNDED)


def min_activity_term(r: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> float:
    """``r'{l, u}``: ``r_j l_j`` where ``r_j > 0``, ``r_j u_j`` where ``r_j < 0``.

    Returns ``-inf`` when a nonzero ``r_j`` meets an infinite bound.
    """
    total = 0.0
    for rj, lj, uj in zip(r, lower, upper):
        if rj > 0.0:
            if math.isinf(lj):
                return -math.inf
            total += rj * lj
        elif rj < 0.0:
            if math.isinf(uj):
                return -math.inf
            total += rj * uj
    return total


def certificate_value(y, b, r, lower, upper, w=None, d=None) -> float:
    """``y'b + w'd + r'{l, u}``, positive for a valid proof of infeasibility."""
    y = np.asarray(y, dtype=float)
    value = float(y @ np.asarray(b, dtype=float)) if y.size else 0.0
    if w is not None and len(w):
        value += float(np.asarray(w, dtype=float) @ np.asarray(d, dtype=float))
    term = min_activity_term(np.asarray(r, dtype=float), lower, upper)
    return value + term


class SimplexSolver:
    """One solver object per LP; carries the basis inverse between pivots."""

    def __init__(self, lp: LpProblem, max_iter: int | None = None):
        self.lp = lp
        m, n = lp.num_rows, lp.num_cols
        self.m, self.n = m, n
        self.M = np.hstack([lp.A, -np.eye(m)])
        self.lo = np.concatenate([lp.lower, lp.rhs])
        self.hi = np.concatenate([lp.upper, np.full(m, math.inf)])
        self.cost = np.concatenate([lp.c, np.zeros(m)])
        self.max_iter = max_iter if max_iter is not None else 200 * (m + n) + 1000
        self.iterations = 0
        self.degenerate = 0
        self.since_refactor = 0

    # -- basis bookkeeping --------------------------------------------------

    def _init_basis(self, hint: LpBasis | None) -> None:
        m, n = self.m, self.n
        nv = n + m
        self.is_basic = np.zeros(nv, dtype=bool)
        self.z = np.zeros(nv)
        basis = list(range(n, n + m))
        at_upper: frozenset[int] = frozenset()
        if hint is not None and len(hint.basis) == m and all(0 <= j < nv for j in hint.basis):
            B = self.M[:, list(hint.basis)]
            if m == 0 or np.linalg.cond(B) < 1e12:
                basis = list(hint.basis)
                at_upper = hint.at_upper
        self.basis = basis
        self.is_basic[basis] = True
        for j in range(nv):
            if self.is_basic[j]:
                continue
            lo, hi = self.lo[j], self.hi[j]
            if j in at_upper and math.isfinite(hi):
                self.z[j] = hi
            elif math.isfinite(lo):
                self.z[j] = lo
            elif math.isfinite(hi):
                self.z[j] = hi
            else:
                self.z[j] = 0.0
        self._refactor()

    def _refactor(self) -> None:
        if self.m:
            self.Binv = np.linalg.inv(self.M[:, self.basis])
        else:
            self.Binv = np.zeros((0, 0))
        self.since_refactor = 0
        self._compute_basics()

    def _compute_basics(self) -> None:
        if not self.m:
            return
        nonbasic = ~self.is_basic
        rhs = -(self.M[:, nonbasic] @ self.z[nonbasic])
        self.z[self.basis] = self.Binv @ rhs

    def _pivot(self, enter: int, leave_pos: int, alpha: np.ndarray) -> None:
        piv = alpha[leave_pos]
        E_row = self.Binv[leave_pos] / piv
        self.Binv -= np.outer(alpha, E_row)
        self.Binv[leave_pos] = E_row
        leave = self.basis[leave_pos]
        self.is_basic[leave] = False
        self.is_basic[enter] = True
        self.basis[leave_pos] = enter
        self.since_refactor += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self._refactor()

    # -- iteration ------------------------------------------------------------

    def _phase1_costs(self) -> np.ndarray:
        xb = self.z[self.basis]
        lo = self.lo[self.basis]
        hi = self.hi[self.basis]
        cb = np.zeros(self.m)
        cb[xb < lo - FEAS_TOL] = -1.0
        cb[xb > hi + FEAS_TOL] = 1.0
        return cb

    def _infeasibility(self) -> float:
        xb = self.z[self.basis]
        lo = self.lo[self.basis]
        hi = self.hi[self.basis]
        below = np.where(xb < lo - FEAS_TOL, lo - xb, 0.0)
        above = np.where(xb > hi + FEAS_TOL, xb - hi, 0.0)
        return float(below.sum() + above.sum())

    def _choose_entering(self, d: np.ndarray, bland: bool):
        best, best_score, best_dir = -1, 0.0, 0
        for j in np.flatnonzero(~self.is_basic):
            dj = d[j]
            can_up = self.z[j] < self.hi[j] - PIVOT_TOL
            can_down = self.z[j] > self.lo[j] + PIVOT_TOL
            if dj < -DUAL_TOL and can_up:
                direction = 1
            elif dj > DUAL_TOL and can_down:
                direction = -1
            else:
                continue
            if bland:
                return int(j), direction
            if abs(dj) > best_score:
                best, best_score, best_dir = int(j), abs(dj), direction
        return (best, best_dir) if best >= 0 else (None, 0)

    def _ratio_test(self, enter: int, direction: int, alpha: np.ndarray, phase1: bool, bland: bool):
        """Largest step keeping feasible basics feasible; infeasible basics
        block where they reach their violated bound."""
        t_best = math.inf
        leave_pos = -1
        leave_to_upper = False
        span = self.hi[enter] - self.lo[enter]
        if math.isfinite(span):
            t_best = span
        xb = self.z[self.basis]
        for pos in range(self.m):
            rate = -direction * alpha[pos]
            if abs(rate) <= PIVOT_TOL:
                continue
            j = self.basis[pos]
            lo, hi, v = self.lo[j], self.hi[j], xb[pos]
            if rate > 0:
                if phase1 and v < lo - FEAS_TOL:
                    t, to_upper = (lo - v) / rate, False
                elif phase1 and v > hi + FEAS_TOL:
                    continue
                elif math.isfinite(hi):
                    t, to_upper = max(hi - v, 0.0) / rate, True
                else:
                    continue
            else:
                if phase1 and v > hi + FEAS_TOL:
                    t, to_upper = (v - hi) / -rate, True
                elif phase1 and v < lo - FEAS_TOL:
                    continue
                elif math.isfinite(lo):
                    t, to_upper = max(v - lo, 0.0) / -rate, False
                else:
                    continue
            if t < t_best - 1e-12:
                take = True
            elif t <= t_best + 1e-12:
                if leave_pos < 0:
                    take = True
                elif bland:
                    take = j < self.basis[leave_pos]
                else:
                    take = abs(alpha[pos]) > abs(alpha[leave_pos])
            else:
                take = False
            if take:
                t_best, leave_pos, leave_to_upper = min(t, t_best), pos, to_upper
        return t_best, leave_pos, leave_to_upper

    def _run_phase(self, phase1: bool) -> LpStatus | None:
        """Iterate until optimal for the phase; returns a terminal status or
        ``None`` when the phase finished normally."""
        while True:
            if self.iterations >= self.max_iter:
                return LpStatus.ITERATION_LIMIT
            if phase1:
                cb = self._phase1_costs()
                if not cb.any():
                    return None
                cost = np.zeros(self.n + self.m)
            else:
                cb = self.cost[self.basis]
                cost = self.cost
            pi = cb @ self.Binv if self.m else np.zeros(0)
            d = cost - pi @ self.M if self.m else cost.copy()
            d[self.is_basic] = 0.0
            bland = self.degenerate >= BLAND_AFTER
            enter, direction = self._choose_entering(d, bland)
            if enter is None:
                self.pi = pi
                self.d = d
                return None
            alpha = self.Binv @ self.M[:, enter] if self.m else np.zeros(0)
            t, leave_pos, to_upper = self._ratio_test(enter, direction, alpha, phase1, bland)
            if not math.isfinite(t):
                if phase1:
                    return LpStatus.NUMERICAL
                return LpStatus.UNBOUNDED
            self.iterations += 1
            if t <= 1e-12:
                self.degenerate += 1
            self.z[enter] += direction * t
            if leave_pos < 0:
                # bound flip of the entering variable
                self.z[enter] = self.hi[enter] if direction > 0 else self.lo[enter]
                self._compute_basics()
                continue
            if abs(alpha[leave_pos]) < PIVOT_TOL:
                self._refactor()
                continue
            leaving = self.basis[leave_pos]
            self._pivot(enter, leave_pos, alpha)
            self.z[leaving] = self.hi[leaving] if to_upper else self.lo[leaving]
            self._compute_basics()

    def solve(self, hint: LpBasis | None = None) -> LpOutcome:
        lp = self.lp
        try:
            self._init_basis(hint)
            status = self._run_phase(phase1=True)
            if status is None and self._phase1_costs().any():
                return self._infeasible_outcome()
            if status is None:
                status = self._run_phase(phase1=False)
        except np.linalg.LinAlgError:
            status = LpStatus.NUMERICAL
        if status is not None:
            return LpOutcome(status, iterations=self.iterations)
        x = self.z[: self.n].copy()
        # snap to bounds that the basis reports as active
        x = np.clip(x, lp.lower, lp.upper)
        act = lp.A @ x if self.m else np.zeros(0)
        if self.m and np.any(act < lp.rhs - 1e-6 * np.maximum(1.0, np.abs(lp.rhs))):
            return LpOutcome(LpStatus.NUMERICAL, iterations=self.iterations)
        pi = self.pi
        return LpOutcome(
            LpStatus.OPTIMAL,
            x=x,
            objective=float(lp.c @ x),
            duals=np.maximum(pi, 0.0) if self.m else np.zeros(0),
            reduced_costs=lp.c - (pi @ lp.A if self.m else 0.0),
            iterations=self.iterations,
            basis=self._basis(),
        )

    def _basis(self) -> LpBasis:
        at_upper = frozenset(
            int(j) for j in np.flatnonzero(~self.is_basic)
            if math.isfinite(self.hi[j]) and self.z[j] == self.hi[j] and self.hi[j] != self.lo[j]
        )
        return LpBasis(tuple(int(j) for j in self.basis), at_upper)

    def _infeasible_outcome(self) -> LpOutcome:
        lp = self.lp
        ray = farkas_ray_from_duals(lp, self.pi)
        if ray is None:
            return LpOutcome(LpStatus.NUMERICAL, iterations=self.iterations)
        value = ray_certificate(lp, ray)
        if not value > CERT_TOL:
            return LpOutcome(LpStatus.NUMERICAL, iterations=self.iterations)
        return LpOutcome(LpStatus.INFEASIBLE, ray=ray, certificate=value,
                         iterations=self.iterations, basis=self._basis())


def farkas_ray_from_duals(lp: LpProblem, pi: np.ndarray) -> DualRay | None:
    """Split the Phase-1 row duals into ``(y, w)``, recompute ``r`` from the
    original rows and scale to unit infinity norm."""
    mult = np.where(pi > 1e-12, pi, 0.0)
    if not mult.any():
        return None
    r = -(mult @ lp.A)
    r[np.abs(r) <= 1e-12 * max(1.0, float(np.abs(lp.A).max()))] = 0.0
    scale = max(float(np.abs(mult).max()), float(np.abs(r).max()) if r.size else 0.0)
    mult = mult / scale
    r = r / scale
    glob = lp.global_rows
    w = {lp.tags[i]: float(mult[i]) for i in np.flatnonzero(~glob) if mult[i] > 0.0}
    return DualRay(y=mult[glob], w=w, r=r)


def ray_certificate(lp: LpProblem, ray: DualRay) -> float:
    """Re-accumulate the ray over the original rows and evaluate the
    certificate; ``r`` is recomputed, not taken from the ray."""
    glob = lp.global_rows
    mult = np.zeros(lp.num_rows)
    mult[glob] = ray.y
    index = {t: i for i, t in enumerate(lp.tags) if t is not None}
    for cid, val in ray.w.items():
        mult[index[cid]] = val
    if np.any(mult < 0.0):
        return -math.inf
    r = -(mult @ lp.A) if lp.num_rows else np.zeros(lp.num_cols)
    r[np.abs(r) <= 1e-12] = 0.0
    return certificate_value(mult, lp.rhs, r, lp.lower, lp.upper)


def solve(lp: LpProblem, basis_hint: LpBasis | None = None, max_iter: int | None = None) -> LpOutcome:
    return SimplexSolver(lp, max_iter=max_iter).solve(basis_hint)
