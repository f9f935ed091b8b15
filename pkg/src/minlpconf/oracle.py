"""Brute-force reference solutions for tiny instances.

Every integer assignment is enumerated; with the integers fixed, the
remaining problem must be linear in the continuous variables and is handed
to scipy's LP solver.  Independent of the simplex and the search code.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .model import Instance

MAX_POINTS = 10_000


class OracleUnavailable(Exception):
    pass


@dataclass
class OracleResult:
    status: str
    objective: float
    x: np.ndarray | None
    points: int


def integer_grid(inst: Instance, max_points: int = MAX_POINTS):
    ints = np.flatnonzero(inst.is_integer)
    ranges = []
    for j in ints:
        lo, hi = inst.lower[j], inst.upper[j]
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise OracleUnavailable(f"x{j} has an infinite bound")
        ranges.append(range(int(math.ceil(lo - 1e-9)), int(math.floor(hi + 1e-9)) + 1))
    size = math.prod(len(r) for r in ranges)
    if size > max_points:
        raise OracleUnavailable(f"{size} integer points exceed {max_points}")
    return ints, ranges, size


def _fixed_rows(inst: Instance, ints, values):
    """Linear ``>=`` rows in the full space once the integers are fixed;
    raises when a nonlinear term still involves a continuous variable."""
    fixed = dict(zip(ints.tolist(), values))
    n = inst.num_vars
    rows, rhs = [], []
    for con in inst.nonlinear:
        q = con.quadratic
        a = np.zeros(n)
        const = q.constant
        for j, v in q.linear.items():
            if j in fixed:
                const += v * fixed[j]
            else:
                a[j] += v
        for (i, j), v in q.quad.items():
            if i in fixed and j in fixed:
                const += v * fixed[i] * fixed[j]
            elif i in fixed:
                a[j] += v * fixed[i]
            elif j in fixed:
                a[i] += v * fixed[j]
            else:
                raise OracleUnavailable(f"constraint {con.index} is nonlinear in continuous variables")
        rows.append(-a)
        rhs.append(const)
    return rows, rhs


def _enumerate(inst: Instance, c: np.ndarray, lower: np.ndarray, upper: np.ndarray, tol: float):
    """Minimum of ``c'x`` over the feasible points inside ``[lower, upper]``:
    ``(status, value, x)`` with status optimal, infeasible or unbounded."""
    box = Instance(inst.name, inst.num_vars, inst.objective, inst.rows, inst.nonlinear,
                   np.maximum(inst.lower, lower), np.minimum(inst.upper, upper), inst.integers)
    if np.any(box.lower > box.upper + 1e-12):
        return "infeasible", math.inf, None
    ints, ranges, _ = integer_grid(box)
    n = inst.num_vars
    cont = np.setdiff1d(np.arange(n), ints)
    best_val, best_x = math.inf, None
    for values in itertools.product(*ranges):
        values = [float(v) for v in values]
        x = np.zeros(n)
        x[ints] = values
        nl_rows, nl_rhs = _fixed_rows(inst, ints, values)
        if cont.size == 0:
            if box.is_feasible(x, tol=tol):
                val = float(c @ x)
                if val < best_val:
                    best_val, best_x = val, x
            continue
        A = np.vstack([inst.A] + ([np.array(nl_rows)] if nl_rows else [])) if inst.A.size or nl_rows else np.zeros((0, n))
        b = np.concatenate([inst.b, np.array(nl_rhs)])
        rhs = b - A[:, ints] @ np.array(values) if ints.size else b
        Ac = A[:, cont]
        bounds = [(None if math.isinf(box.lower[j]) else box.lower[j],
                   None if math.isinf(box.upper[j]) else box.upper[j]) for j in cont]
        res = linprog(c[cont], A_ub=-Ac if Ac.size else None, b_ub=-rhs if Ac.size else None,
                      bounds=bounds, method="highs")
        if res.status == 3:
            return "unbounded", -math.inf, None
        if res.status != 0:
            continue
        x[cont] = res.x
        val = float(c @ x)
        if val < best_val:
            best_val, best_x = val, x
    return ("optimal" if best_x is not None else "infeasible"), best_val, best_x


def solve_by_enumeration(inst: Instance, tol: float = 1e-7) -> OracleResult:
    _, _, size = integer_grid(inst)
    status, value, x = _enumerate(inst, inst.objective, inst.lower, inst.upper, tol)
    return OracleResult(status, value, x, size)


def min_activity(inst: Instance, coefs, lower=None, upper=None, tol: float = 1e-7) -> float:
    """Smallest value of ``coefs . x`` over feasible points inside the box
    (``inf`` when there are none).  A row ``coefs . x >= rhs`` is satisfied
    by all of them exactly when the result is at least ``rhs``."""
    lower = inst.lower if lower is None else np.asarray(lower, dtype=float)
    upper = inst.upper if upper is None else np.asarray(upper, dtype=float)
    _, value, _ = _enumerate(inst, np.asarray(coefs, dtype=float), lower, upper, tol)
    return value


def feasible_points(inst: Instance, tol: float = 1e-9):
    """All feasible points of a pure-integer instance."""
    if not inst.is_integer.all():
        raise OracleUnavailable("feasible-point enumeration needs all variables integer")
    _, ranges, _ = integer_grid(inst)
    out = []
    for values in itertools.product(*ranges):
        x = np.array(values, dtype=float)
        if inst.is_feasible(x, tol=tol):
            out.append(x)
    return np.array(out).reshape(-1, inst.num_vars)
