import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import N_VARS, expr_strategy, quadratic_expr_strategy
from oracles import finite_difference, tree_eval
from minlpconf.expr import (
    Const,
    Convexity,
    Product,
    Square,
    Sum,
    Var,
    classify_convexity,
    evaluate,
    from_prefix,
    gradient,
    quadratic_form,
    to_prefix,
    variables,
)

points = st.lists(st.integers(-3, 3), min_size=N_VARS, max_size=N_VARS).map(lambda v: np.array(v, dtype=float))


def test_evaluate_examples():
    x0, x1 = variables(2)
    assert evaluate(Square(x0) - 4, [3.0]) == 5.0
    assert evaluate(x0 * x1, [0.0, 7.0]) == 0.0
    # independent bottom-up evaluator
    e = Square(2 * x0 + 1) + x0 * x1
    assert evaluate(e, [1.0, 2.0]) == 11.0
    assert tree_eval(e, [1.0, 2.0]) == 11.0


def test_gradient_examples():
    x0, x1 = variables(2)
    assert np.allclose(gradient(Square(x0) - 4, [3.0]), [6.0])
    assert np.allclose(gradient(x0 * x1, [2.0, 5.0]), [5.0, 2.0])


@given(expr_strategy(), points)
def test_evaluate_matches_independent_evaluator(e, x):
    assert evaluate(e, x) == pytest.approx(tree_eval(e, x), rel=1e-12, abs=1e-9)


@given(expr_strategy(), st.lists(st.floats(-2, 2), min_size=N_VARS, max_size=N_VARS))
def test_gradient_matches_finite_differences(e, x):
    x = np.array(x)
    g = gradient(e, x)
    assert g.shape == (N_VARS,)
    for j in range(N_VARS):
        fd = finite_difference(lambda p: evaluate(e, p), x, j)
        assert g[j] == pytest.approx(fd, rel=1e-6, abs=1e-5)


def test_classify_examples():
    x0, x1 = variables(2)
    assert classify_convexity(Square(x0) + 3 * x1 - 1) is Convexity.CONVEX
    assert classify_convexity(x0 * x1 - 2) is Convexity.BILINEAR
    assert classify_convexity(Square(x0) - Square(x1)) is Convexity.GENERAL
    # x^2 + 2xy + y^2 = (x + y)^2 is convex even though it has a bilinear term
    assert classify_convexity(Square(x0) + 2 * (x0 * x1) + Square(x1)) is Convexity.CONVEX


@given(quadratic_expr_strategy(), st.data())
def test_convex_label_is_sound(e, data):
    if classify_convexity(e) is not Convexity.CONVEX:
        return
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    x = rng.uniform(-5, 5, (1000, N_VARS))
    y = rng.uniform(-5, 5, (1000, N_VARS))
    lam = rng.uniform(0, 1, 1000)
    for p, q, t in zip(x, y, lam):
        mid = evaluate(e, t * p + (1 - t) * q)
        assert mid <= t * evaluate(e, p) + (1 - t) * evaluate(e, q) + 1e-9 * (1 + abs(mid))


@given(quadratic_expr_strategy())
def test_quadratic_form_reproduces_values(e):
    q = quadratic_form(e)
    rng = np.random.default_rng(0)
    for x in rng.uniform(-3, 3, (5, N_VARS)):
        val = q.constant + sum(v * x[j] for j, v in q.linear.items())
        val += sum(v * x[i] * x[j] for (i, j), v in q.quad.items())
        assert val == pytest.approx(evaluate(e, x), rel=1e-9, abs=1e-9)


def test_degree_three_rejected():
    x0, = variables(1)
    with pytest.raises(ValueError):
        quadratic_form(Product(x0, Square(x0)))


@given(expr_strategy())
def test_prefix_round_trip(e):
    assert from_prefix(to_prefix(e)) == e


def test_prefix_sugar_and_errors():
    assert evaluate(from_prefix(["-", ["x", 0], 2]), [5.0]) == 3.0
    assert evaluate(from_prefix(["-", ["x", 0]]), [5.0]) == -5.0
    with pytest.raises(ValueError, match="unknown operator"):
        from_prefix(["/", 1, 2])
    with pytest.raises(ValueError, match="exactly two"):
        from_prefix(["*", 1])
    with pytest.raises(ValueError):
        from_prefix(["x", 1.5])
