"""Outer approximation: gradient cuts, McCormick and secant estimators, and the
cut pool with per-cut introduction depth and validity scope."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .expr import Convexity, evaluate, gradient
from .model import Instance, NonlinearConstraint

SEPARATION_TOL = 1e-6
DUPLICATE_TOL = 1e-9


class Scope(str, enum.Enum):
    GLOBAL = "global"
    LOCAL = "local"


@dataclass(frozen=True, eq=False)
class Cut:
    """Linear row ``coefs . x[idx] >= rhs``.

    Local cuts carry the box they were derived on; they hold for every point
    of that box satisfying the originating constraint.
    """

    idx: tuple[int, ...]
    coefs: tuple[float, ...]
    rhs: float
    origin: int
    introduced_at_depth: int = 0
    node_id: int = 0
    scope: Scope = Scope.GLOBAL
    valid_box: tuple[np.ndarray, np.ndarray] | None = None
    cut_id: int = -1

    def activity(self, x) -> float:
        return float(sum(c * x[j] for j, c in zip(self.idx, self.coefs)))

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        for j, c in zip(self.idx, self.coefs):
            out[j] += c
        return out

    def violation(self, x) -> float:
        return self.rhs - self.activity(x)


def _make_cut(dense: np.ndarray, rhs: float, **kw) -> Cut | None:
    """Sparse, infinity-normalized cut from a dense row; ``None`` if empty."""
    dense = np.where(np.abs(dense) <= 1e-13, 0.0, dense)
    scale = float(np.abs(dense).max()) if dense.size else 0.0
    if scale == 0.0:
        return None
    idx = tuple(int(j) for j in np.flatnonzero(dense))
    return Cut(idx, tuple(float(dense[j] / scale) for j in idx), float(rhs / scale), **kw)


def gradient_cut(con: NonlinearConstraint, x, n: int | None = None, **kw) -> Cut | None:
    """Linearization ``g(x~) + grad g(x~)'(x - x~) <= 0`` as a ``>=`` row.

    Returns ``None`` when ``x~`` does not violate ``g`` by more than the
    separation tolerance or when the gradient vanishes there.
    """
    x = np.asarray(x, dtype=float)
    gval = evaluate(con.expr, x)
    if not gval > SEPARATION_TOL:
        return None
    grad = gradient(con.expr, x)
    if not np.any(np.abs(grad) > 1e-12):
        return None
    rhs = gval - float(grad @ x)
    kw.setdefault("origin", con.index)
    return _make_cut(-grad, rhs, scope=Scope.GLOBAL, **kw)


# -- McCormick envelopes ---------------------------------------------------------

def mccormick_under(li: float, ui: float, lj: float, uj: float) -> list[tuple[float, float, float]]:
    """Underestimators ``x_i x_j >= a x_i + b x_j + c`` as ``(a, b, c)``."""
    return [(lj, li, -li * lj), (uj, ui, -ui * uj)]


def mccormick_over(li: float, ui: float, lj: float, uj: float) -> list[tuple[float, float, float]]:
    """Overestimators ``x_i x_j <= a x_i + b x_j + c`` as ``(a, b, c)``."""
    return [(uj, li, -li * uj), (lj, ui, -ui * lj)]


def mccormick_cuts(i: int, j: int, lower, upper, w_index: int, depth: int = 0,
                   node_id: int = 0, origin: int = -1) -> list[Cut]:
    """The two underestimating planes of ``w = x_i x_j`` over the box as
    rows ``w - a x_i - b x_j >= c``; empty if a participating bound is infinite."""
    li, ui, lj, uj = lower[i], upper[i], lower[j], upper[j]
    if not all(math.isfinite(v) for v in (li, ui, lj, uj)):
        return []
    box = (np.array(lower, dtype=float), np.array(upper, dtype=float))
    cuts = []
    for a, b, c in mccormick_under(li, ui, lj, uj):
        coef: dict[int, float] = {w_index: 1.0}
        coef[i] = coef.get(i, 0.0) - a
        coef[j] = coef.get(j, 0.0) - b
        idx = tuple(sorted(k for k in coef if coef[k] != 0.0))
        cuts.append(Cut(idx, tuple(coef[k] for k in idx), c, origin, depth, node_id, Scope.LOCAL, box))
    return cuts


def underestimator(con: NonlinearConstraint, x, lower, upper) -> tuple[np.ndarray, float, bool] | None:
    """Linear underestimator ``a'x + c <= g(x)`` valid over the box, chosen
    to be tightest at ``x``.

    Positive squares use tangents (box-free), negative squares secants and
    bilinear terms the McCormick plane that is largest at ``x``.  The flag is
    ``True`` when some term depends on the box.  ``None`` means a needed bound
    is infinite.
    """
    q = con.quadratic
    n = len(x)
    a = np.zeros(n)
    c = q.constant
    local = False
    for j, v in q.linear.items():
        a[j] += v
    for (i, j), coef in q.quad.items():
        if i == j:
            if coef > 0:
                a[i] += 2.0 * coef * x[i]
                c -= coef * x[i] ** 2
            else:
                lo, hi = lower[i], upper[i]
                if not (math.isfinite(lo) and math.isfinite(hi)):
                    return None
                a[i] += coef * (lo + hi)
                c -= coef * lo * hi
                local = True
            continue
        li, ui, lj, uj = lower[i], upper[i], lower[j], upper[j]
        if not all(math.isfinite(v) for v in (li, ui, lj, uj)):
            return None
        if coef > 0:
            planes = mccormick_under(li, ui, lj, uj)
            best = max(planes, key=lambda p: p[0] * x[i] + p[1] * x[j] + p[2])
        else:
            planes = mccormick_over(li, ui, lj, uj)
            best = min(planes, key=lambda p: p[0] * x[i] + p[1] * x[j] + p[2])
        a[i] += coef * best[0]
        a[j] += coef * best[1]
        c += coef * best[2]
        local = True
    return a, c, local


# -- pool -------------------------------------------------------------------------

@dataclass
class CutPool:
    """All linearizations separated during a search, keyed by id.  Which
    cuts are active at a node is stored on the node itself."""

    cuts: dict[int, Cut] = field(default_factory=dict)
    next_id: int = 0

    def __getitem__(self, cid: int) -> Cut:
        return self.cuts[cid]

    def __len__(self) -> int:
        return len(self.cuts)

    def in_root_set(self, cid: int) -> bool:
        """Membership in the root set: cuts separated at depth 0.  The root
        box contains every feasible point, so these are globally valid."""
        return self.cuts[cid].introduced_at_depth == 0

    def is_duplicate(self, cut: Cut, active: Iterable[int]) -> bool:
        for cid in active:
            other = self.cuts[cid]
            if other.idx != cut.idx:
                continue
            if abs(other.rhs - cut.rhs) <= DUPLICATE_TOL and all(
                abs(p - q) <= DUPLICATE_TOL for p, q in zip(other.coefs, cut.coefs)
            ):
                return True
        return False

    def add(self, cut: Cut, active: Iterable[int] = ()) -> Cut | None:
        """Store ``cut`` under a fresh id unless it duplicates an active cut."""
        if self.is_duplicate(cut, active):
            return None
        stored = Cut(cut.idx, cut.coefs, cut.rhs, cut.origin, cut.introduced_at_depth,
                     cut.node_id, cut.scope, cut.valid_box, self.next_id)
        self.cuts[self.next_id] = stored
        self.next_id += 1
        return stored

    def matrix(self, ids: Sequence[int], n: int) -> tuple[np.ndarray, np.ndarray]:
        G = np.zeros((len(ids), n))
        d = np.zeros(len(ids))
        for r, cid in enumerate(ids):
            cut = self.cuts[cid]
            G[r, list(cut.idx)] = cut.coefs
            d[r] = cut.rhs
        return G, d


def separate(inst: Instance, x, lower, upper, pool: CutPool, active: Sequence[int],
             depth: int = 0, node_id: int = 0) -> list[Cut]:
    """Cuts for every nonlinear constraint violated at ``x`` by more than the
    separation tolerance; new cuts are stored in ``pool`` and returned."""
    x = np.asarray(x, dtype=float)
    active = list(active)
    new: list[Cut] = []
    box = (np.array(lower, dtype=float), np.array(upper, dtype=float))
    for con in inst.nonlinear:
        if not evaluate(con.expr, x) > SEPARATION_TOL:
            continue
        if con.kind is Convexity.CONVEX:
            cut = gradient_cut(con, x, introduced_at_depth=depth, node_id=node_id)
        else:
            est = underestimator(con, x, lower, upper)
            if est is None:
                continue
            a, c, local = est
            if not float(a @ x) + c > SEPARATION_TOL:
                continue
            cut = _make_cut(-a, c, origin=con.index, introduced_at_depth=depth, node_id=node_id,
                            scope=Scope.LOCAL if local else Scope.GLOBAL,
                            valid_box=box if local else None)
        if cut is None:
            continue
        stored = pool.add(cut, active + [c.cut_id for c in new])
        if stored is not None:
            new.append(stored)
    return new
