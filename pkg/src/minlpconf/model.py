"""MINLP instances ``min c'x s.t. Ax >= b, g_k(x) <= 0, l <= x <= u, x_I integral``
and their JSON file format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .expr import (
    Convexity,
    Expr,
    Product,
    Quadratic,
    Sum,
    Var,
    Const,
    classify_convexity,
    evaluate,
    from_prefix,
    quadratic_form,
    to_prefix,
    var_indices,
)

INF = math.inf


class InstanceError(ValueError):
    """Raised for unreadable, schema-violating or inconsistent instance files."""


@dataclass(frozen=True)
class LinearRow:
    """Sparse row ``sum coefs[k] * x[idx[k]] >= rhs``."""

    idx: tuple[int, ...]
    coefs: tuple[float, ...]
    rhs: float

    def activity(self, x) -> float:
        return float(sum(c * x[j] for j, c in zip(self.idx, self.coefs)))

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[list(self.idx)] = self.coefs
        return out


@dataclass(frozen=True)
class NonlinearConstraint:
    """``expr(x) <= 0``; ``kind`` is derived from the expression."""

    expr: Expr
    index: int = 0
    kind: Convexity = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", classify_convexity(self.expr))

    @cached_property
    def quadratic(self) -> Quadratic:
        return quadratic_form(self.expr)

    @cached_property
    def nonconvex_vars(self) -> tuple[int, ...]:
        """Variables occurring in terms that need box-dependent estimators."""
        if self.kind is Convexity.CONVEX:
            return ()
        out = set()
        for (i, j), c in self.quadratic.quad.items():
            if i != j or c < 0:
                out.update((i, j))
        return tuple(sorted(out))

    @cached_property
    def nonlinear_vars(self) -> tuple[int, ...]:
        return tuple(sorted({k for key in self.quadratic.quad for k in key}))


@dataclass(frozen=True, eq=False)
class Instance:
    name: str
    num_vars: int
    objective: np.ndarray
    rows: tuple[LinearRow, ...]
    nonlinear: tuple[NonlinearConstraint, ...]
    lower: np.ndarray
    upper: np.ndarray
    integers: frozenset[int]

    def __post_init__(self):
        n = self.num_vars
        object.__setattr__(self, "objective", np.asarray(self.objective, dtype=float))
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "nonlinear", tuple(self.nonlinear))
        object.__setattr__(self, "integers", frozenset(int(j) for j in self.integers))
        for name in ("objective", "lower", "upper"):
            if getattr(self, name).shape != (n,):
                raise InstanceError(f"{name}: expected length {n}")
        if np.any(self.lower > self.upper):
            j = int(np.argmax(self.lower > self.upper))
            raise InstanceError(f"inconsistent bounds on x{j}: {self.lower[j]} > {self.upper[j]}")
        if np.isnan(self.lower).any() or np.isnan(self.upper).any():
            raise InstanceError("bounds must not be NaN")
        for r, row in enumerate(self.rows):
            if len(set(row.idx)) != len(row.idx):
                raise InstanceError(f"rows[{r}]: duplicate column index")
            if any(j >= n or j < 0 for j in row.idx):
                raise InstanceError(f"rows[{r}]: column index out of range")
        for k, con in enumerate(self.nonlinear):
            if any(j >= n for j in var_indices(con.expr)):
                raise InstanceError(f"nonlinear[{k}]: variable index out of range")
            try:
                con.quadratic
            except ValueError as exc:
                raise InstanceError(f"nonlinear[{k}]: {exc}") from None
        if any(j >= n or j < 0 for j in self.integers):
            raise InstanceError("integers: index out of range")

    @property
    def n(self) -> int:
        return self.num_vars

    @cached_property
    def A(self) -> np.ndarray:
        A = np.zeros((len(self.rows), self.num_vars))
        for i, row in enumerate(self.rows):
            A[i, list(row.idx)] = row.coefs
        return A

    @cached_property
    def b(self) -> np.ndarray:
        return np.array([row.rhs for row in self.rows], dtype=float)

    @cached_property
    def is_integer(self) -> np.ndarray:
        mask = np.zeros(self.num_vars, dtype=bool)
        mask[list(self.integers)] = True
        return mask

    def max_violation(self, x) -> float:
        """Largest violation of rows, nonlinear constraints, bounds and integrality."""
        x = np.asarray(x, dtype=float)
        viol = [0.0]
        if self.rows:
            viol.append(float(np.max(self.b - self.A @ x)))
        viol.extend(evaluate(c.expr, x) for c in self.nonlinear)
        viol.append(float(np.max(self.lower - x)))
        viol.append(float(np.max(x - self.upper)))
        if self.integers:
            xi = x[self.is_integer]
            viol.append(float(np.max(np.abs(xi - np.round(xi)))))
        return max(viol)

    def is_feasible(self, x, tol: float = 1e-6) -> bool:
        return self.max_violation(x) <= tol


def interval_of(quad: Quadratic, lower, upper) -> tuple[float, float]:
    """Natural interval extension of a quadratic over a box."""
    lo = hi = quad.constant
    for j, c in quad.linear.items():
        a, b = sorted((c * lower[j], c * upper[j]))
        lo, hi = lo + a, hi + b
    for (i, j), c in quad.quad.items():
        if i == j:
            cands = [lower[i] ** 2, upper[i] ** 2]
            tmin = 0.0 if lower[i] <= 0.0 <= upper[i] else min(cands)
            tmax = max(cands)
        else:
            with np.errstate(invalid="ignore"):
                prods = [lower[i] * lower[j], lower[i] * upper[j], upper[i] * lower[j], upper[i] * upper[j]]
            prods = [0.0 if math.isnan(p) else p for p in prods]
            tmin, tmax = min(prods), max(prods)
        a, b = sorted((c * tmin, c * tmax))
        lo, hi = lo + a, hi + b
    return lo, hi


def with_objective_expr(
    name: str,
    num_vars: int,
    objective: Expr,
    rows: Sequence[LinearRow],
    nonlinear: Sequence[Expr],
    lower,
    upper,
    integers,
) -> Instance:
    """Move a nonlinear objective into ``f(x) - z <= 0`` with a new variable ``z``.

    ``z`` gets the interval bounds of ``f`` over the box so the root LP stays
    bounded before any cut exists.
    """
    quad = quadratic_form(objective)
    lower = list(lower)
    upper = list(upper)
    zlo, zhi = interval_of(quad, lower, upper)
    z = num_vars
    c = np.zeros(num_vars + 1)
    c[z] = 1.0
    cons = [NonlinearConstraint(e, k) for k, e in enumerate(nonlinear)]
    cons.append(NonlinearConstraint(Sum((objective, Product(Const(-1.0), Var(z)))), len(cons)))
    return Instance(
        name=name,
        num_vars=num_vars + 1,
        objective=c,
        rows=tuple(rows),
        nonlinear=tuple(cons),
        lower=np.array(lower + [zlo]),
        upper=np.array(upper + [zhi]),
        integers=frozenset(integers),
    )


# -- file format ----------------------------------------------------------------

def _schema() -> dict:
    text = resources.files("minlpconf").joinpath("schemas/instance.schema.json").read_text()
    return json.loads(text)


def _extreal(v) -> float:
    if v == "inf":
        return INF
    if v == "-inf":
        return -INF
    return float(v)


def _normalize_row(coefs, rhs: float, sense: str) -> list[LinearRow]:
    idx = tuple(int(j) for j, _ in coefs)
    vals = tuple(float(c) for _, c in coefs)
    neg = tuple(-c for c in vals)
    if sense == ">=":
        return [LinearRow(idx, vals, rhs)]
    if sense == "<=":
        return [LinearRow(idx, neg, -rhs)]
    return [LinearRow(idx, vals, rhs), LinearRow(idx, neg, -rhs)]


def instance_from_dict(data: dict) -> Instance:
    try:
        jsonschema.validate(data, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InstanceError(f"schema violation at {where}: {exc.message}") from None
    n = data["num_vars"]
    for key in ("lower", "upper"):
        if len(data[key]) != n:
            raise InstanceError(f"{key}: expected {n} entries, got {len(data[key])}")
    rows: list[LinearRow] = []
    for i, row in enumerate(data["rows"]):
        if any(j >= n for j, _ in row["coefs"]):
            raise InstanceError(f"rows/{i}/coefs: column index out of range")
        rows.extend(_normalize_row(row["coefs"], float(row["rhs"]), row["sense"]))
    exprs = []
    for k, item in enumerate(data["nonlinear"]):
        try:
            e = from_prefix(item["expr"], f"nonlinear/{k}/expr")
            quadratic_form(e)
        except ValueError as exc:
            msg = str(exc)
            raise InstanceError(msg if msg.startswith("nonlinear/") else f"nonlinear/{k}/expr: {msg}") from None
        exprs.append(e if item["sense"] == "<=0" else Product(Const(-1.0), e))
    lower = [_extreal(v) for v in data["lower"]]
    upper = [_extreal(v) for v in data["upper"]]
    for j, (lo, hi) in enumerate(zip(lower, upper)):
        if lo > hi:
            raise InstanceError(f"inconsistent bounds on x{j}: lower {lo} > upper {hi}")
    obj = data["objective"]
    if isinstance(obj, dict):
        try:
            f = from_prefix(obj["expr"], "objective/expr")
        except ValueError as exc:
            raise InstanceError(str(exc)) from None
        if quadratic_form(f).is_affine:
            q = quadratic_form(f)
            c = np.zeros(n)
            for j, v in q.linear.items():
                c[j] = v
            obj = list(c)
        else:
            return with_objective_expr(data["name"], n, f, rows, exprs, lower, upper, data["integers"])
    if len(obj) != n:
        raise InstanceError(f"objective: expected {n} entries, got {len(obj)}")
    return Instance(
        name=data["name"],
        num_vars=n,
        objective=np.array(obj, dtype=float),
        rows=tuple(rows),
        nonlinear=tuple(NonlinearConstraint(e, k) for k, e in enumerate(exprs)),
        lower=np.array(lower),
        upper=np.array(upper),
        integers=frozenset(data["integers"]),
    )


def instance_to_dict(inst: Instance) -> dict:
    def ext(v: float):
        if v == INF:
            return "inf"
        if v == -INF:
            return "-inf"
        return float(v)

    return {
        "name": inst.name,
        "num_vars": inst.num_vars,
        "objective": [float(v) for v in inst.objective],
        "rows": [
            {"coefs": [[j, float(c)] for j, c in zip(r.idx, r.coefs)], "rhs": float(r.rhs), "sense": ">="}
            for r in inst.rows
        ],
        "nonlinear": [{"expr": to_prefix(c.expr), "sense": "<=0"} for c in inst.nonlinear],
        "lower": [ext(v) for v in inst.lower],
        "upper": [ext(v) for v in inst.upper],
        "integers": sorted(inst.integers),
    }


def dumps(obj, indent: int = 1, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError("non-finite floats must be encoded as strings")
        text = format(obj, ".17g")
        return text if any(ch in text for ch in ".en") else text + ".0"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (list, tuple, dict)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent, _level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def load_instance(path) -> Instance:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise InstanceError(f"{path}: {exc.strerror}") from None
    try:
        inst = instance_from_dict(data)
    except InstanceError as exc:
        raise InstanceError(f"{path}: {exc}") from None
    return inst


def write_instance(inst: Instance, path) -> None:
    Path(path).write_text(dumps(instance_to_dict(inst)) + "\n")
