"""Lagrangian infeasibility certificates for convex subproblems

    min f(x)  s.t.  g_k(x) <= 0,  h_e(x) = 0,  l <= x <= u

with convex ``f, g_k`` and affine ``h_e``.  Multipliers ``(lam, mu)`` prove
infeasibility when ``sum lam_k g_k + sum mu_e h_e`` is positive on the whole
box; at a point ``x*`` where that aggregate is stationary, the gradient cuts
at ``x*`` admit ``(lam, mu)`` as an ordinary Farkas ray.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .expr import Const, Convexity, Expr, Product, Sum, classify_convexity, evaluate, from_prefix, gradient, quadratic_form
from .simplex import certificate_value

CERT_TOL = 1e-6
STATIONARITY_TOL = 1e-6


class NotConvexError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConvexSubproblem:
    num_vars: int
    inequalities: tuple[Expr, ...]
    equalities: tuple[Expr, ...] = ()
    objective: Expr = field(default_factory=lambda: Const(0.0))
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        n = self.num_vars
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        object.__setattr__(self, "equalities", tuple(self.equalities))
        lo = np.full(n, -math.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = np.full(n, math.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if classify_convexity(self.objective) is not Convexity.CONVEX:
            raise NotConvexError("objective is not convex")
        for k, g in enumerate(self.inequalities):
            if classify_convexity(g) is not Convexity.CONVEX:
                raise NotConvexError(f"inequality {k} is not convex")
        for e, h in enumerate(self.equalities):
            if not quadratic_form(h).is_affine:
                raise NotConvexError(f"equality {e} is not affine")

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        x = np.asarray(x, dtype=float)
        if np.any(x < self.lower - tol) or np.any(x > self.upper + tol):
            return False
        return all(evaluate(g, x) <= tol for g in self.inequalities) and all(
            abs(evaluate(h, x)) <= tol for h in self.equalities
        )


@dataclass
class DualMultipliers:
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        if np.any(self.lam < 0.0):
            raise ValueError("inequality multipliers must be non-negative")


def _check_lengths(sub: ConvexSubproblem, lam, mu) -> None:
    if len(lam) != len(sub.inequalities) or len(mu) != len(sub.equalities):
        raise ValueError(
            f"expected {len(sub.inequalities)} inequality and {len(sub.equalities)} equality multipliers"
        )


def lagrangian(sub: ConvexSubproblem, x, lam, mu=()) -> float:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float)) if len(sub.equalities) else np.zeros(0)
    _check_lengths(sub, lam, mu)
    if np.any(lam < 0.0):
        raise ValueError("inequality multipliers must be non-negative")
    value = evaluate(sub.objective, x)
    value += sum(l * evaluate(g, x) for l, g in zip(lam, sub.inequalities))
    value += sum(m * evaluate(h, x) for m, h in zip(mu, sub.equalities))
    return float(value)


# -- box-constrained convex minimization ---------------------------------------

def _quad_data(expr: Expr, n: int):
    q = quadratic_form(expr)
    H = q.hessian(n) if q.quad else np.zeros((n, n))
    a = np.zeros(n)
    for j, v in q.linear.items():
        a[j] = v
    return H, a, q.constant


def minimize_convex(expr: Expr, lower, upper, x0=None, tol: float = 1e-8, max_iter: int = 20000):
    """Minimum of a convex ``expr`` over a finite box.

    Projected gradient with backtracking step sizes, followed by an
    active-set Newton polish that is exact for the quadratic grammar.
    Returns ``(value, argmin)``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if classify_convexity(expr) is not Convexity.CONVEX:
        raise NotConvexError("minimize_convex needs a convex expression")
    n = lower.shape[0]
    H, a, c = _quad_data(expr, n)
    if not H.any():
        # affine: the minimum sits at a corner, possibly at infinity
        x = np.where(a > 0, lower, np.where(a < 0, upper, np.clip(0.0, lower, upper)))
        terms = a[a != 0] * x[a != 0]
        return float(c + terms.sum()), x
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ValueError("box must be finite for a nonlinear expression")

    def f(x):
        return 0.5 * x @ H @ x + a @ x + c

    def grad(x):
        return H @ x + a

    x = np.clip(0.5 * (lower + upper) if x0 is None else np.asarray(x0, dtype=float), lower, upper)
    step = 1.0 / max(float(np.linalg.eigvalsh(H).max()), 1e-12)
    fx = f(x)
    for _ in range(max_iter):
        g = grad(x)
        t = step
        while True:
            cand = np.clip(x - t * g, lower, upper)
            fc = f(cand)
            if fc <= fx - 0.5 / t * float((cand - x) @ (cand - x)) + 1e-15 or t < 1e-16:
                break
            t *= 0.5
        moved = float(np.max(np.abs(cand - x))) if n else 0.0
        x, fx = cand, fc
        if moved <= tol:
            break
    for _ in range(n + 1):
        polished = _polish(H, a, x, lower, upper)
        if polished is None or f(polished) > fx - 1e-15:
            break
        x, fx = polished, f(polished)
    return float(fx), x


def _polish(H, a, x, lower, upper):
    g = H @ x + a
    at_lo = (x <= lower + 1e-10) & (g >= 0)
    at_hi = (x >= upper - 1e-10) & (g <= 0)
    free = ~(at_lo | at_hi)
    if not free.any():
        return None
    fixed = ~free
    rhs = -(a[free] + H[np.ix_(free, fixed)] @ x[fixed])
    sol, *_ = np.linalg.lstsq(H[np.ix_(free, free)], rhs, rcond=None)
    out = x.copy()
    out[free] = sol
    return np.clip(out, lower, upper)


# -- aggregated inequality -------------------------------------------------------

@dataclass
class Aggregate:
    """``expr(x) <= 0`` is valid for the subproblem; ``certified`` when its
    minimum over the box exceeds the tolerance, proving infeasibility."""

    expr: Expr
    min_value: float
    argmin: np.ndarray
    certified: bool


def aggregate_expr(sub: ConvexSubproblem, lam, mu=()) -> Expr:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float)) if len(sub.equalities) else np.zeros(0)
    terms: list[Expr] = []
    terms += [Product(Const(l), g) for l, g in zip(lam, sub.inequalities) if l != 0.0]
    terms += [Product(Const(m), h) for m, h in zip(mu, sub.equalities) if m != 0.0]
    if not terms:
        return Const(0.0)
    return terms[0] if len(terms) == 1 else Sum(tuple(terms))


def aggregate_inequality(sub: ConvexSubproblem, lam, mu=()) -> Aggregate:
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float)) if len(sub.equalities) else np.zeros(0)
    _check_lengths(sub, lam, mu)
    if np.any(lam < 0.0):
        raise ValueError("inequality multipliers must be non-negative")
    expr = aggregate_expr(sub, lam, mu)
    value, arg = minimize_convex(expr, sub.lower, sub.upper)
    return Aggregate(expr, value, arg, value > CERT_TOL)


# -- linearized Farkas system -------------------------------------------------------

@dataclass
class FarkasResiduals:
    stationarity: float
    value: float

    @property
    def passes(self) -> bool:
        return self.stationarity <= STATIONARITY_TOL and self.value < -CERT_TOL


def farkas_residuals(sub: ConvexSubproblem, x, lam, mu=()) -> FarkasResiduals:
    """Stationarity norm ``|sum lam grad g + sum mu grad h|_inf`` and the
    aggregated right-hand side of the gradient cuts at ``x``,
    ``sum lam (grad g'x - g(x)) + sum mu (grad h'x - h(x))``."""
    x = np.asarray(x, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float)) if len(sub.equalities) else np.zeros(0)
    _check_lengths(sub, lam, mu)
    station = np.zeros(sub.num_vars)
    value = 0.0
    for m, fn in list(zip(lam, sub.inequalities)) + list(zip(mu, sub.equalities)):
        grad = gradient(fn, x)
        station += m * grad
        value += m * (float(grad @ x) - evaluate(fn, x))
    norm = float(np.max(np.abs(station))) if station.size else 0.0
    return FarkasResiduals(norm, value)


def linearized_farkas_check(sub: ConvexSubproblem, x, lam, mu=()) -> bool:
    if np.any(np.atleast_1d(np.asarray(lam, dtype=float)) < 0.0):
        return False
    return farkas_residuals(sub, x, lam, mu).passes


def linearized_rows(sub: ConvexSubproblem, x):
    """Gradient cuts at ``x`` as ``>=`` rows ``(A, b)``: one per inequality,
    two per equality (``h <= 0`` then ``-h <= 0``)."""
    x = np.asarray(x, dtype=float)
    rows, rhs = [], []
    for g in sub.inequalities:
        grad = gradient(g, x)
        rows.append(-grad)
        rhs.append(evaluate(g, x) - float(grad @ x))
    for h in sub.equalities:
        grad = gradient(h, x)
        base = evaluate(h, x) - float(grad @ x)
        rows.append(-grad)
        rhs.append(base)
        rows.append(grad)
        rhs.append(-base)
    return np.array(rows).reshape(-1, sub.num_vars), np.array(rhs)


def linearized_certificate(sub: ConvexSubproblem, x, lam, mu=()) -> float:
    """Farkas certificate of the gradient-cut rows at ``x`` with multipliers
    ``(lam, mu)`` over the subproblem box."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float)) if len(sub.equalities) else np.zeros(0)
    A, b = linearized_rows(sub, x)
    y = np.concatenate([lam] + [[max(m, 0.0), max(-m, 0.0)] for m in mu]) if len(mu) else lam
    r = -(y @ A)
    r[np.abs(r) <= 1e-12] = 0.0
    return certificate_value(y, b, r, sub.lower, sub.upper)


# -- multiplier oracle ----------------------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto ``{p >= 0, sum p = 1}``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - 1.0)[0][-1]
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def dual_ascent_multipliers(sub: ConvexSubproblem, iters: int = 400) -> DualMultipliers:
    """Maximize ``min_x sum lam g(x)`` over the simplex by projected
    supergradient ascent; equalities enter as two opposite inequalities."""
    funcs = list(sub.inequalities) + list(sub.equalities)
    funcs += [Product(Const(-1.0), h) for h in sub.equalities]
    k = len(funcs)
    lam = np.full(k, 1.0 / k)
    best, best_val = lam.copy(), -math.inf
    x = None
    for it in range(1, iters + 1):
        agg = Sum(tuple(Product(Const(l), g) for l, g in zip(lam, funcs)))
        val, x = minimize_convex(agg, sub.lower, sub.upper, x0=x)
        if val > best_val:
            best, best_val = lam.copy(), val
        sub_grad = np.array([evaluate(g, x) for g in funcs])
        lam = project_simplex(lam + sub_grad / math.sqrt(it))
    n_in, n_eq = len(sub.inequalities), len(sub.equalities)
    mu = best[n_in:n_in + n_eq] - best[n_in + n_eq:]
    return DualMultipliers(best[:n_in], mu)


# -- verification and files ------------------------------------------------------

def verify(sub: ConvexSubproblem, lam, mu=(), point=None) -> dict:
    """Report ``certified``, ``not-certified`` or ``invalid-multipliers``."""
    try:
        mult = DualMultipliers(lam, mu if len(sub.equalities) else np.zeros(0))
        _check_lengths(sub, mult.lam, mult.mu if len(sub.equalities) else np.zeros(0))
        if not (np.all(np.isfinite(mult.lam)) and np.all(np.isfinite(mult.mu))):
            raise ValueError("multipliers must be finite")
    except ValueError as exc:
        return {"status": "invalid-multipliers", "reason": str(exc)}
    mu_arr = mult.mu if len(sub.equalities) else np.zeros(0)
    agg = aggregate_inequality(sub, mult.lam, mu_arr)
    x = agg.argmin if point is None else np.asarray(point, dtype=float)
    res = farkas_residuals(sub, x, mult.lam, mu_arr)
    return {
        "status": "certified" if agg.certified else "not-certified",
        "aggregate_min": float(agg.min_value),
        "argmin": [float(v) for v in agg.argmin],
        "stationarity_residual": float(res.stationarity),
        "linearized_value": float(res.value),
        "linearized_farkas": bool(res.passes),
        "linearized_certificate": float(linearized_certificate(sub, x, mult.lam, mu_arr)),
    }


def _extreal(v) -> float:
    return {"inf": math.inf, "-inf": -math.inf}.get(v, v) if isinstance(v, str) else float(v)


def subproblem_from_dict(data: dict) -> ConvexSubproblem:
    n = int(data["num_vars"])
    obj = data.get("objective")
    return ConvexSubproblem(
        num_vars=n,
        inequalities=tuple(from_prefix(e, f"inequalities/{k}") for k, e in enumerate(data.get("inequalities", []))),
        equalities=tuple(from_prefix(e, f"equalities/{k}") for k, e in enumerate(data.get("equalities", []))),
        objective=Const(0.0) if obj is None else from_prefix(obj, "objective"),
        lower=np.array([_extreal(v) for v in data.get("lower", ["-inf"] * n)]),
        upper=np.array([_extreal(v) for v in data.get("upper", ["inf"] * n)]),
    )


def load_subproblem(path) -> ConvexSubproblem:
    return subproblem_from_dict(json.loads(Path(path).read_text()))


def load_multipliers(path) -> dict:
    data = json.loads(Path(path).read_text())
    return {"lam": data.get("lambda", []), "mu": data.get("mu", []), "point": data.get("point")}
