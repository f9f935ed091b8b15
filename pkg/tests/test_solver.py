import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from oracles import random_tiny_instance
from minlpconf.expr import Square, variables
from minlpconf.model import Instance, LinearRow, NonlinearConstraint
from minlpconf.oracle import solve_by_enumeration
from minlpconf.propagation import Side
from minlpconf.solver import BranchAndBound, Setting, Settings, Status, solve


def product_instance(cap):
    x, y = variables(2)
    return Instance("xy", 2, [-1.0, -1.0], (), (NonlinearConstraint(x * y - cap, 0),),
                    np.zeros(2), np.full(2, 2.0), frozenset({0, 1}))


def test_pure_lp_solves_at_root():
    inst = Instance("lp", 2, [1.0, 2.0], (LinearRow((0, 1), (1.0, 1.0), 1.0),), (), np.zeros(2),
                    np.full(2, 3.0), frozenset())
    res = solve(inst)
    assert res.status is Status.OPTIMAL and res.nodes == 1
    assert res.objective == pytest.approx(1.0)


@pytest.mark.parametrize("cap, expected", [(1.0, -2.0), (2.0, -3.0)])
def test_product_bound_matches_enumeration(cap, expected):
    inst = product_instance(cap)
    oracle = solve_by_enumeration(inst)
    assert oracle.objective == expected
    for setting in Setting:
        res = solve(inst, conflict=setting)
        assert res.status is Status.OPTIMAL
        assert res.objective == pytest.approx(oracle.objective, abs=1e-6)
        assert inst.is_feasible(res.x)


def test_infeasible_instance():
    x, = variables(1)
    inst = Instance("inf", 1, [1.0], (LinearRow((0,), (1.0,), 2.0),), (), [0.0], [1.0], frozenset({0}))
    res = solve(inst)
    assert res.status is Status.INFEASIBLE and res.x is None


def _root(bb):
    return bb._new_node(None, (), -np.inf)


def test_integer_branch_rounds_down_and_up():
    inst = Instance("b", 1, [1.0], (), (), [0.0], [5.0], frozenset({0}))
    bb = BranchAndBound(inst)
    kids = bb.branch(_root(bb), np.array([2.5]), inst.lower, inst.upper, (), 0.0)
    assert [k.decision for k in kids] == [(0, Side.UPPER, 2.0), (0, Side.LOWER, 3.0)]


def _bilinear(upper):
    x, y = variables(2)
    return Instance("s", 2, [0.0, 0.0], (), (NonlinearConstraint(1.0 - x * y, 0),), np.zeros(2),
                    np.asarray(upper, float), frozenset())


def test_spatial_split_is_clamped():
    inst = _bilinear([10.0, 2.0])
    bb = BranchAndBound(inst)
    kids = bb.branch(_root(bb), np.array([9.9, 0.0]), inst.lower, inst.upper, (), 0.0)
    assert [k.decision for k in kids] == [(0, Side.UPPER, 8.0), (0, Side.LOWER, 8.0)]


def test_spatial_tie_takes_smaller_index():
    inst = _bilinear([4.0, 4.0])
    bb = BranchAndBound(inst)
    kids = bb.branch(_root(bb), np.array([0.1, 2.0]), inst.lower, inst.upper, (), 0.0)
    assert kids[0].decision[0] == 0
    assert kids[0].decision[2] == pytest.approx(0.8)


def test_integer_branching_preferred_over_spatial():
    x, y = variables(2)
    inst = Instance("p", 2, [0.0, 0.0], (), (NonlinearConstraint(1.0 - x * y, 0),), np.zeros(2),
                    np.array([10.0, 2.0]), frozenset({1}))
    bb = BranchAndBound(inst)
    kids = bb.branch(_root(bb), np.array([0.0, 0.5]), inst.lower, inst.upper, (), 0.0)
    assert kids[0].decision == (1, Side.UPPER, 0.0)


def test_node_limit_reports_limit():
    inst = product_instance(1.0)
    res = solve(inst, node_limit=1)
    assert res.status is Status.LIMIT and res.nodes == 1
    assert res.best_bound <= -2.0 + 1e-9


def test_same_settings_same_run():
    rng = np.random.default_rng(11)
    for k in range(10):
        inst = random_tiny_instance(rng, f"d{k}")
        for setting in Setting:
            a, b = solve(inst, conflict=setting), solve(inst, conflict=setting)
            assert (a.status, a.nodes, a.objective) == (b.status, b.nodes, b.objective)
            assert a.stats.lift_histogram == b.stats.lift_histogram


def _monotone(bb):
    for node in bb.nodes.values():
        if node.parent is None or not np.isfinite(node.lp_bound):
            continue
        parent = bb.nodes[node.parent]
        if np.isfinite(parent.lp_bound):
            assert node.lp_bound >= parent.lp_bound - 1e-9


@hsettings(max_examples=40)
@given(st.integers(0, 100_000), st.sampled_from(list(Setting)))
def test_against_enumeration(seed, setting):
    rng = np.random.default_rng(seed)
    inst = random_tiny_instance(rng, continuous=bool(seed % 2))
    oracle = solve_by_enumeration(inst)
    bb = BranchAndBound(inst, Settings(conflict=setting))
    res = bb.solve()
    assert res.status.value == oracle.status
    if oracle.status == "optimal":
        assert res.objective == pytest.approx(oracle.objective, abs=1e-6)
        assert inst.is_feasible(res.x, tol=1e-6)
        for con in res.conflicts:
            if con.scope.value == "global":
                assert con.is_satisfied(res.x)
    _monotone(bb)


def test_settings_keyword_override():
    res = solve(product_instance(1.0), Settings(conflict=Setting.DUALRAY), node_limit=1)
    assert res.setting is Setting.DUALRAY and res.status is Status.LIMIT
    assert solve(product_instance(1.0), conflict="graph").setting is Setting.CONFGRAPH


def test_constant_violation_on_fixed_variables_prunes():
    # once x0 = x2 = 0 the second constraint reads 1 <= 0; nothing is left to branch on
    x = variables(3)
    cons = (NonlinearConstraint(-(x[1] * x[0]) - 3.0, 0),
            NonlinearConstraint(-(x[0] * x[2]) + Square(x[0]) + 1.0, 1))
    inst = Instance("fixed", 3, [0.0, 0.0, 2.0], (LinearRow((2,), (-2.0,), -1.0),), cons,
                    np.array([-1.0, 0.0, -1.0]), np.array([0.0, 3.0, 1.0]), frozenset({0, 1, 2}))
    bb = BranchAndBound(inst)
    res = bb.solve()
    assert not bb.incomplete
    assert res.status.value == solve_by_enumeration(inst).status == "infeasible"
    assert any(reason == "constant" for _, reason in res.infeasible_nodes)
