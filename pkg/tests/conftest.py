import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings, strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from minlpconf.expr import Const, Product, Square, Sum, Var  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

N_VARS = 3


def expr_strategy(n=N_VARS, max_leaves=12):
    leaves = st.one_of(
        st.integers(-4, 4).map(lambda v: Const(float(v))),
        st.integers(0, n - 1).map(Var),
    )

    def extend(children):
        return st.one_of(
            st.lists(children, min_size=1, max_size=3).map(lambda a: Sum(tuple(a))),
            st.tuples(children, children).map(lambda p: Product(*p)),
            children.map(Square),
        )

    return st.recursive(leaves, extend, max_leaves=max_leaves)


def quadratic_expr_strategy(n=N_VARS):
    """Expressions of degree at most two: sums of scaled affine terms,
    products of two affine terms and squares of affine terms."""
    affine = st.lists(st.tuples(st.integers(0, n - 1), st.integers(-3, 3)), min_size=1, max_size=3).map(
        lambda terms: Sum(tuple(Product(Const(float(c)), Var(j)) for j, c in terms) + (Const(0.5),))
    )
    term = st.one_of(
        affine,
        st.tuples(affine, affine).map(lambda p: Product(*p)),
        affine.map(Square),
        st.tuples(st.integers(-3, 3), affine).map(lambda p: Product(Const(float(p[0])), Square(p[1]))),
    )
    return st.lists(term, min_size=1, max_size=4).map(lambda ts: Sum(tuple(ts)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
