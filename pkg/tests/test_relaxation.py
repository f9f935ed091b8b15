import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import box_grid
from minlpconf.expr import Convexity, Square, evaluate, variables
from minlpconf.model import Instance, NonlinearConstraint
from minlpconf.relaxation import (
    CutPool,
    Scope,
    gradient_cut,
    mccormick_cuts,
    mccormick_over,
    mccormick_under,
    separate,
    underestimator,
)


def test_gradient_cut_example():
    x, = variables(1)
    cut = gradient_cut(NonlinearConstraint(Square(x) - 4, 0), [3.0])
    # -6x >= -13 normalized to -x >= -13/6
    assert cut.idx == (0,)
    assert cut.coefs == (-1.0,)
    assert cut.rhs == pytest.approx(-13.0 / 6.0)
    assert cut.scope is Scope.GLOBAL


def test_gradient_cut_needs_violation():
    x, = variables(1)
    assert gradient_cut(NonlinearConstraint(Square(x) - 4, 0), [2.0]) is None
    assert gradient_cut(NonlinearConstraint(Square(x) - 4, 0), [0.0]) is None


def _random_convex(rng, n):
    x = variables(n)
    center = rng.uniform(-1, 1, n)
    weights = rng.uniform(0.2, 2.0, n)
    expr = sum((float(w) * Square(x[j] - float(c)) for j, (w, c) in enumerate(zip(weights, center))), 0.0)
    expr = expr + sum(float(a) * x[j] for j, a in enumerate(rng.uniform(-1, 1, n))) - float(rng.uniform(0.5, 2.0))
    return NonlinearConstraint(expr, 0)


def test_gradient_cuts_hold_on_feasible_samples():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(1, 4))
        con = _random_convex(rng, n)
        assert con.kind is Convexity.CONVEX
        pts = rng.uniform(-4, 4, (20000, n))
        vals = np.array([evaluate(con.expr, p) for p in pts])
        feas = pts[vals <= 0][:1000]
        outside = pts[vals > 1e-3][:5]
        for xt in outside:
            cut = gradient_cut(con, xt)
            assert cut is not None
            act = feas[:, list(cut.idx)] @ np.array(cut.coefs)
            assert np.all(act >= cut.rhs - 1e-9)
            assert cut.activity(xt) < cut.rhs  # separates the point


def test_mccormick_unit_box():
    under = mccormick_under(0.0, 1.0, 0.0, 1.0)
    assert sorted(under) == sorted([(0.0, 0.0, 0.0), (1.0, 1.0, -1.0)])
    cuts = mccormick_cuts(0, 1, [0.0, 0.0, -5], [1.0, 1.0, 5], w_index=2)
    assert all(c.scope is Scope.LOCAL for c in cuts)
    rows = [({j: a for j, a in zip(c.idx, c.coefs) if a != 0}, c.rhs) for c in cuts]
    assert ({2: 1.0}, 0.0) in rows
    assert ({0: -1.0, 1: -1.0, 2: 1.0}, -1.0) in rows


def test_mccormick_point_box():
    for a, b, c in mccormick_under(2.0, 2.0, 3.0, 3.0):
        assert a * 2 + b * 3 + c == pytest.approx(6.0)
    assert mccormick_cuts(0, 1, [0, -np.inf], [1, 1], w_index=2) == []


def test_mccormick_planes_bound_product_on_grid():
    rng = np.random.default_rng(9)
    for _ in range(100):
        li, lj = rng.uniform(-5, 5, 2)
        ui, uj = li + rng.uniform(0, 5), lj + rng.uniform(0, 5)
        grid = box_grid([li, lj], [ui, uj])
        prod = grid[:, 0] * grid[:, 1]
        for a, b, c in mccormick_under(li, ui, lj, uj):
            assert np.min(prod - (a * grid[:, 0] + b * grid[:, 1] + c)) >= -1e-12 * (1 + np.abs(prod).max())
        for a, b, c in mccormick_over(li, ui, lj, uj):
            assert np.max(prod - (a * grid[:, 0] + b * grid[:, 1] + c)) <= 1e-12 * (1 + np.abs(prod).max())


@given(st.integers(0, 10_000))
def test_underestimator_is_valid_on_box(seed):
    rng = np.random.default_rng(seed)
    x0, x1 = variables(2)
    coefs = rng.integers(-2, 3, 5).astype(float)
    expr = coefs[0] * (x0 * x1) + coefs[1] * Square(x0) + coefs[2] * Square(x1) + coefs[3] * x0 + coefs[4]
    con = NonlinearConstraint(expr, 0)
    lo = rng.uniform(-3, 1, 2)
    hi = lo + rng.uniform(0.1, 3, 2)
    xt = rng.uniform(lo, hi)
    est = underestimator(con, xt, lo, hi)
    a, c, _ = est
    grid = box_grid(lo, hi, 41)
    vals = np.array([evaluate(expr, p) for p in grid])
    assert np.all(grid @ a + c <= vals + 1e-9)


def _bilinear_instance():
    x, y = variables(2)
    return Instance("bl", 2, [1.0, 1.0], (), (NonlinearConstraint(1.0 - x * y, 0),),
                    np.zeros(2), np.full(2, 3.0), frozenset())


def test_separate_examples():
    x, = variables(1)
    inst = Instance("sq", 1, [1.0], (), (NonlinearConstraint(Square(x) - 4, 0),), [-5.0], [5.0], frozenset())
    pool = CutPool()
    cuts = separate(inst, [3.0], inst.lower, inst.upper, pool, [], depth=0)
    assert len(cuts) == 1 and cuts[0].scope is Scope.GLOBAL and pool.in_root_set(cuts[0].cut_id)
    assert separate(inst, [1.0], inst.lower, inst.upper, pool, []) == []

    inst = _bilinear_instance()
    pool = CutPool()
    lo, hi = np.array([0.0, 0.0]), np.array([1.0, 2.0])
    cuts = separate(inst, [0.2, 0.2], lo, hi, pool, [], depth=3, node_id=17)
    assert cuts and all(c.scope is Scope.LOCAL and c.introduced_at_depth == 3 for c in cuts)
    assert not pool.in_root_set(cuts[0].cut_id)
    assert np.array_equal(cuts[0].valid_box[1], hi)


def test_duplicates_are_dropped():
    inst = _bilinear_instance()
    pool = CutPool()
    lo, hi = inst.lower, inst.upper
    first = separate(inst, [0.2, 0.2], lo, hi, pool, [])
    again = separate(inst, [0.2, 0.2], lo, hi, pool, [c.cut_id for c in first])
    assert first and again == []
    assert len(pool) == len(first)


def test_cut_is_normalized():
    x, = variables(1)
    cut = gradient_cut(NonlinearConstraint(Square(x) * 50.0 - 4, 0), [3.0])
    assert max(abs(c) for c in cut.coefs) == pytest.approx(1.0)
