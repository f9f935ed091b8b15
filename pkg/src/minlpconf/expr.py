"""Expression trees for constraint functions.

The grammar is deliberately small: constants, variables, n-ary sums,
products of two subexpressions and squares.  Every well-formed tree that the
instance loader accepts expands to a polynomial of degree at most two, which
keeps convexity classification exact and lets the relaxation build
McCormick and secant estimators term by term.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class Convexity(str, enum.Enum):
    CONVEX = "convex"
    BILINEAR = "nonconvex-bilinear"
    GENERAL = "nonconvex-general"


class Expr:
    """Base class of all expression nodes.

    Nodes are immutable.  Arithmetic operators build new trees so generators
    and tests can write ``x0 * x1 - 2`` instead of nesting constructors.
    """

    __slots__ = ()

    def children(self) -> tuple["Expr", ...]:
        return ()

    def __add__(self, other):
        return Sum((self, as_expr(other)))

    def __radd__(self, other):
        return Sum((as_expr(other), self))

    def __sub__(self, other):
        return Sum((self, Product(Const(-1.0), as_expr(other))))

    def __rsub__(self, other):
        return Sum((as_expr(other), Product(Const(-1.0), self)))

    def __mul__(self, other):
        return Product(self, as_expr(other))

    def __rmul__(self, other):
        return Product(as_expr(other), self)

    def __neg__(self):
        return Product(Const(-1.0), self)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int

    def __post_init__(self):
        if int(self.index) != self.index or self.index < 0:
            raise ValueError(f"variable index must be a non-negative integer, got {self.index!r}")
        object.__setattr__(self, "index", int(self.index))


@dataclass(frozen=True, eq=True)
class Sum(Expr):
    args: tuple[Expr, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if not self.args:
            raise ValueError("empty sum")

    def children(self):
        return self.args


@dataclass(frozen=True, eq=True)
class Product(Expr):
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, eq=True)
class Square(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {type(value).__name__} to an expression")


def variables(n: int) -> list[Var]:
    """Convenience: ``x = variables(3)`` gives ``[Var(0), Var(1), Var(2)]``."""
    return [Var(j) for j in range(n)]


def var_indices(expr: Expr) -> set[int]:
    out: set[int] = set()
    stack = [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            out.add(node.index)
        stack.extend(node.children())
    return out


def evaluate(expr: Expr, point: Sequence[float]) -> float:
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return float(point[expr.index])
    if isinstance(expr, Sum):
        return float(sum(evaluate(a, point) for a in expr.args))
    if isinstance(expr, Product):
        return evaluate(expr.left, point) * evaluate(expr.right, point)
    if isinstance(expr, Square):
        v = evaluate(expr.arg, point)
        return v * v
    raise TypeError(f"unknown expression node {type(expr).__name__}")


def _backprop(expr: Expr, point, adjoint: float, grad: np.ndarray) -> None:
    if adjoint == 0.0 or isinstance(expr, Const):
        return
    if isinstance(expr, Var):
        grad[expr.index] += adjoint
    elif isinstance(expr, Sum):
        for a in expr.args:
            _backprop(a, point, adjoint, grad)
    elif isinstance(expr, Product):
        lv = evaluate(expr.left, point)
        rv = evaluate(expr.right, point)
        _backprop(expr.left, point, adjoint * rv, grad)
        _backprop(expr.right, point, adjoint * lv, grad)
    elif isinstance(expr, Square):
        _backprop(expr.arg, point, 2.0 * adjoint * evaluate(expr.arg, point), grad)
    else:
        raise TypeError(f"unknown expression node {type(expr).__name__}")


def gradient(expr: Expr, point: Sequence[float]) -> np.ndarray:
    """Reverse-mode derivative of ``expr`` at ``point`` (length ``len(point)``)."""
    point = np.asarray(point, dtype=float)
    grad = np.zeros(point.shape[0])
    _backprop(expr, point, 1.0, grad)
    return grad


# -- polynomial expansion ----------------------------------------------------

Monomial = tuple[int, ...]


def _poly(expr: Expr) -> dict[Monomial, float]:
    if isinstance(expr, Const):
        return {(): expr.value} if expr.value != 0.0 else {}
    if isinstance(expr, Var):
        return {(expr.index,): 1.0}
    if isinstance(expr, Sum):
        out: dict[Monomial, float] = {}
        for a in expr.args:
            for mono, c in _poly(a).items():
                out[mono] = out.get(mono, 0.0) + c
        return {m: c for m, c in out.items() if c != 0.0}
    if isinstance(expr, (Product, Square)):
        left, right = (expr.left, expr.right) if isinstance(expr, Product) else (expr.arg, expr.arg)
        pl, pr = _poly(left), _poly(right)
        out = {}
        for ml, cl in pl.items():
            for mr, cr in pr.items():
                mono = tuple(sorted(ml + mr))
                out[mono] = out.get(mono, 0.0) + cl * cr
        return {m: c for m, c in out.items() if c != 0.0}
    raise TypeError(f"unknown expression node {type(expr).__name__}")


@dataclass(frozen=True)
class Quadratic:
    """Expanded form ``constant + sum linear[j] x_j + sum quad[i, j] x_i x_j``.

    Keys of ``quad`` satisfy ``i <= j``; ``(i, i)`` entries are squares.
    """

    constant: float
    linear: dict[int, float]
    quad: dict[tuple[int, int], float]

    def hessian(self, n: int) -> np.ndarray:
        H = np.zeros((n, n))
        for (i, j), c in self.quad.items():
            if i == j:
                H[i, i] += 2.0 * c
            else:
                H[i, j] += c
                H[j, i] += c
        return H

    @property
    def is_affine(self) -> bool:
        return not self.quad

    def squares(self) -> dict[int, float]:
        return {i: c for (i, j), c in self.quad.items() if i == j}

    def bilinears(self) -> dict[tuple[int, int], float]:
        return {k: c for k, c in self.quad.items() if k[0] != k[1]}


def quadratic_form(expr: Expr) -> Quadratic:
    """Expand ``expr``; raises ``ValueError`` when the degree exceeds two."""
    poly = _poly(expr)
    const = 0.0
    linear: dict[int, float] = {}
    quad: dict[tuple[int, int], float] = {}
    for mono, c in poly.items():
        if len(mono) == 0:
            const = c
        elif len(mono) == 1:
            linear[mono[0]] = c
        elif len(mono) == 2:
            quad[(mono[0], mono[1])] = c
        else:
            raise ValueError(f"expression has degree {len(mono)} > 2")
    return Quadratic(const, linear, quad)


def classify_convexity(expr: Expr) -> Convexity:
    q = quadratic_form(expr)
    if q.is_affine:
        return Convexity.CONVEX
    n = 1 + max(max(k) for k in q.quad)
    H = q.hessian(n)
    scale = max(1.0, float(np.abs(H).max()))
    if np.linalg.eigvalsh(H).min() >= -1e-12 * scale:
        return Convexity.CONVEX
    if all(c >= 0.0 for c in q.squares().values()):
        return Convexity.BILINEAR
    return Convexity.GENERAL


def affine_expr(coefs: dict[int, float] | Iterable[tuple[int, float]], constant: float = 0.0) -> Expr:
    """Build ``constant + sum c_j x_j`` as a tree."""
    items = coefs.items() if isinstance(coefs, dict) else coefs
    terms: list[Expr] = [Product(Const(c), Var(j)) for j, c in items]
    if constant != 0.0 or not terms:
        terms.append(Const(constant))
    return terms[0] if len(terms) == 1 else Sum(tuple(terms))


# -- prefix notation -----------------------------------------------------------

def to_prefix(expr: Expr):
    """Serialize to nested lists: numbers, ``["x", j]``, ``["+", ...]``,
    ``["*", a, b]`` and ``["sq", a]``."""
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, Var):
        return ["x", expr.index]
    if isinstance(expr, Sum):
        return ["+", *(to_prefix(a) for a in expr.args)]
    if isinstance(expr, Product):
        return ["*", to_prefix(expr.left), to_prefix(expr.right)]
    if isinstance(expr, Square):
        return ["sq", to_prefix(expr.arg)]
    raise TypeError(f"unknown expression node {type(expr).__name__}")


def from_prefix(tree, path: str = "expr") -> Expr:
    """Inverse of :func:`to_prefix`.  ``["-", a]`` and ``["-", a, b]`` are
    accepted as sugar and expand to products with ``-1``."""
    if isinstance(tree, bool):
        raise ValueError(f"{path}: booleans are not expressions")
    if isinstance(tree, (int, float)):
        return Const(float(tree))
    if not isinstance(tree, list) or not tree or not isinstance(tree[0], str):
        raise ValueError(f"{path}: expected a number or a list headed by an operator, got {tree!r}")
    op, args = tree[0], tree[1:]
    if op == "x":
        if len(args) != 1 or not isinstance(args[0], int) or isinstance(args[0], bool):
            raise ValueError(f"{path}: variable node needs one integer index")
        return Var(args[0])
    sub = [from_prefix(a, f"{path}[{i + 1}]") for i, a in enumerate(args)]
    if op == "+":
        if not sub:
            raise ValueError(f"{path}: empty sum")
        return Sum(tuple(sub))
    if op == "*":
        if len(sub) != 2:
            raise ValueError(f"{path}: product takes exactly two operands")
        return Product(sub[0], sub[1])
    if op == "sq":
        if len(sub) != 1:
            raise ValueError(f"{path}: square takes one operand")
        return Square(sub[0])
    if op == "-":
        if len(sub) == 1:
            return Product(Const(-1.0), sub[0])
        if len(sub) == 2:
            return Sum((sub[0], Product(Const(-1.0), sub[1])))
        raise ValueError(f"{path}: '-' takes one or two operands")
    raise ValueError(f"{path}: unknown operator {op!r}")
