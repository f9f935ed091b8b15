import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import box_grid
from minlpconf.expr import Const, Square, evaluate, variables
from minlpconf.nlpcert import (
    ConvexSubproblem,
    DualMultipliers,
    NotConvexError,
    aggregate_inequality,
    dual_ascent_multipliers,
    farkas_residuals,
    lagrangian,
    linearized_certificate,
    linearized_farkas_check,
    minimize_convex,
    subproblem_from_dict,
    verify,
)


def halflines():
    x, = variables(1)
    return ConvexSubproblem(1, (1.0 - x, x + 0.0))


def balls(c1, r1, c2, r2, box=5.0):
    x, y = variables(2)
    g1 = Square(x - float(c1[0])) + Square(y - float(c1[1])) - float(r1) ** 2
    g2 = Square(x - float(c2[0])) + Square(y - float(c2[1])) - float(r2) ** 2
    return ConvexSubproblem(2, (g1, g2), lower=[-box, -box], upper=[box, box])


def test_lagrangian_examples():
    x, = variables(1)
    sub = ConvexSubproblem(1, (Square(x) - 1.0,))
    assert lagrangian(sub, [2.0], [2.0]) == pytest.approx(6.0)
    sub = ConvexSubproblem(1, (Square(x) - 1.0,), objective=Square(x - 1.0))
    assert lagrangian(sub, [3.0], [0.0]) == pytest.approx(4.0)
    with pytest.raises(ValueError):
        lagrangian(sub, [3.0], [-1.0])


def test_lagrangian_recomposes():
    rng = np.random.default_rng(1)
    x, y = variables(2)
    sub = ConvexSubproblem(2, (Square(x) + y - 1.0, Square(x - y) - 2.0), equalities=(x + 2.0 * y - 1.0,),
                           objective=Square(y) + x)
    for _ in range(50):
        p = rng.normal(size=2)
        lam, mu = rng.uniform(0, 3, 2), rng.normal(size=1)
        want = (p[1] ** 2 + p[0]) + lam[0] * (p[0] ** 2 + p[1] - 1) + lam[1] * ((p[0] - p[1]) ** 2 - 2) \
            + mu[0] * (p[0] + 2 * p[1] - 1)
        assert lagrangian(sub, p, lam, mu) == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_nonconvex_rejected():
    x, y = variables(2)
    with pytest.raises(NotConvexError):
        ConvexSubproblem(2, (x * y,))
    with pytest.raises(NotConvexError):
        ConvexSubproblem(2, (), equalities=(Square(x) - 1.0,))
    with pytest.raises(ValueError):
        DualMultipliers([-1.0], [])


def test_aggregate_examples():
    sub = halflines()
    agg = aggregate_inequality(sub, [1.0, 1.0])
    assert agg.certified and agg.min_value == pytest.approx(1.0)
    agg = aggregate_inequality(sub, [0.0, 0.0])
    assert not agg.certified and agg.min_value == 0.0


def test_minimize_examples():
    x, = variables(1)
    val, arg = minimize_convex(Square(x - 3.0), [0.0], [1.0])
    assert val == pytest.approx(4.0) and arg[0] == pytest.approx(1.0)
    val, arg = minimize_convex(Square(x), [-1.0], [1.0])
    assert val == pytest.approx(0.0, abs=1e-12) and arg[0] == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(ValueError):
        minimize_convex(Square(x), [-math.inf], [1.0])
    y, z = variables(2)
    with pytest.raises(ValueError):
        minimize_convex(y * z, [0.0, 0.0], [1.0, 1.0])


def _grid_min(f, lo, hi, points=1000):
    """Dense grid, then a second dense grid around the best point."""
    g = box_grid(lo, hi, points)
    k = int(np.argmin(f(g)))
    step = (np.asarray(hi) - np.asarray(lo)) / (points - 1)
    lo2 = np.maximum(g[k] - step, lo)
    hi2 = np.minimum(g[k] + step, hi)
    g2 = box_grid(lo2, hi2, points)
    return float(np.min(f(g2)))


def test_minimize_matches_grid():
    rng = np.random.default_rng(4)
    for trial in range(12):
        n = 1 + trial % 2
        xs = variables(n)
        L = rng.normal(size=(n, n))
        a = rng.normal(size=n) * 3
        c = float(rng.normal())
        expr = Const(c)
        for k in range(n):
            expr = expr + Square(sum((float(L[k, j]) * xs[j] for j in range(n)), Const(0.0)))
        expr = expr + sum((float(a[j]) * xs[j] for j in range(n)), Const(0.0))
        lo = rng.uniform(-3, 0, n)
        hi = lo + rng.uniform(0.5, 3, n)
        M = L.T @ L

        def f(P):
            return np.einsum("pi,ij,pj->p", P, M, P) + P @ a + c

        val, arg = minimize_convex(expr, lo, hi)
        assert evaluate(expr, arg) == pytest.approx(val, abs=1e-9)
        assert val == pytest.approx(_grid_min(f, lo, hi, 1000 if n == 1 else 300), abs=1e-5)


def test_linearized_examples():
    sub = halflines()
    res = farkas_residuals(sub, [0.5], [1.0, 1.0])
    assert res.stationarity == 0.0 and res.value == pytest.approx(-1.0)
    assert linearized_farkas_check(sub, [0.5], [1.0, 1.0])
    assert linearized_certificate(sub, [0.5], [1.0, 1.0]) == pytest.approx(1.0)
    assert not linearized_farkas_check(sub, [0.5], [0.0, 0.0])
    assert not linearized_farkas_check(sub, [0.5], [1.1, 1.0])
    assert not linearized_farkas_check(sub, [0.5], [-1.0, -1.0])


def test_disjoint_balls_certified():
    sub = balls((-1.5, 0.0), 1.0, (1.5, 0.0), 1.0)
    mult = dual_ascent_multipliers(sub)
    assert mult.lam == pytest.approx([0.5, 0.5], abs=1e-3)
    agg = aggregate_inequality(sub, mult.lam)
    assert agg.certified and agg.min_value == pytest.approx(1.25, abs=1e-3)
    assert linearized_farkas_check(sub, agg.argmin, mult.lam)
    assert linearized_certificate(sub, agg.argmin, mult.lam) > 1e-6


def test_overlapping_balls_not_certified():
    sub = balls((-0.5, 0.0), 1.0, (0.5, 0.0), 1.0)
    mult = dual_ascent_multipliers(sub, iters=200)
    assert not aggregate_inequality(sub, mult.lam).certified
    assert verify(sub, mult.lam)["status"] == "not-certified"


@given(st.integers(0, 10_000))
def test_weak_duality(seed):
    rng = np.random.default_rng(seed)
    x, y = variables(2)
    sub = ConvexSubproblem(2, (Square(x) + Square(y) - 4.0, x - y - 1.0), equalities=(x + y - 1.0,),
                           objective=Square(x - 1.0) + y)
    lam = rng.uniform(0, 5, 2)
    mu = rng.normal(size=1) * 3
    t = rng.uniform(-1.0, 2.0)
    p = np.array([t, 1.0 - t])  # on the equality
    if sub.is_feasible(p):
        assert lagrangian(sub, p, lam, mu) <= evaluate(sub.objective, p) + 1e-9


def test_certified_aggregates_are_sound():
    rng = np.random.default_rng(8)
    certified = 0
    for _ in range(30):
        c1, c2 = rng.uniform(-3, 3, 2), rng.uniform(-3, 3, 2)
        r1, r2 = rng.uniform(0.3, 1.5, 2)
        sub = balls(c1, r1, c2, r2)
        mult = dual_ascent_multipliers(sub, iters=150)
        if not aggregate_inequality(sub, mult.lam).certified:
            continue
        certified += 1
        g = box_grid(sub.lower, sub.upper, 201)
        in1 = np.sum((g - c1) ** 2, axis=1) <= r1 ** 2 + 1e-6
        in2 = np.sum((g - c2) ** 2, axis=1) <= r2 ** 2 + 1e-6
        assert not np.any(in1 & in2)
    assert certified >= 5


def test_verify_statuses():
    sub = halflines()
    rep = verify(sub, [1.0, 1.0])
    assert rep["status"] == "certified" and rep["aggregate_min"] == pytest.approx(1.0)
    json.dumps(rep)
    assert verify(sub, [-1.0, 1.0])["status"] == "invalid-multipliers"
    assert verify(sub, [1.0])["status"] == "invalid-multipliers"
    assert verify(sub, [float("nan"), 1.0])["status"] == "invalid-multipliers"
    rep = verify(sub, [1.0, 1.0], point=[0.5])
    assert rep["linearized_farkas"] and rep["linearized_certificate"] == pytest.approx(1.0)


def test_subproblem_from_dict():
    sub = subproblem_from_dict({"num_vars": 1, "inequalities": [["-", 1, ["x", 0]], ["x", 0]],
                                "lower": ["-inf"], "upper": ["inf"]})
    assert verify(sub, [1.0, 1.0])["status"] == "certified"
