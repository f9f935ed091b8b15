import csv
import io
import json
from decimal import Decimal, getcontext

import jsonschema
import numpy as np
import pytest
from hypothesis import given, strategies as st

from minlpconf.harness import (
    CSV_HEADER,
    BenchmarkReport,
    RunRow,
    family_b,
    family_c,
    generate_corpus,
    generate_instances,
    report_schema,
    run_suite,
    shifted_geo_mean,
    strip_timing,
)
from minlpconf.model import load_instance
from minlpconf.simplex import LpProblem, LpStatus, solve as lp_solve
from minlpconf.solver import BranchAndBound, Setting, Settings, Status, solve


def sgm_decimal(values, shift):
    getcontext().prec = 60
    s = Decimal(shift)
    logs = [(Decimal(v) + s).ln() for v in values]
    return float((sum(logs) / len(logs)).exp() - s)


def test_sgm_examples():
    assert shifted_geo_mean([1, 1, 1], 1.0) == pytest.approx(1.0, abs=1e-15)
    assert shifted_geo_mean([0], 1.0) == 0.0
    assert shifted_geo_mean([10, 1000], 10.0) == pytest.approx(sgm_decimal([10, 1000], 10), rel=1e-14)
    assert sgm_decimal([10, 1000], 10) == pytest.approx(20200 ** 0.5 - 10, rel=1e-15)


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=20), st.sampled_from([1.0, 10.0, 100.0]))
def test_sgm_matches_high_precision(values, shift):
    assert shifted_geo_mean(values, shift) == pytest.approx(sgm_decimal(values, shift), rel=1e-12, abs=1e-9)


def test_sgm_errors():
    with pytest.raises(ValueError):
        shifted_geo_mean([])
    with pytest.raises(ValueError):
        shifted_geo_mean([1.0], 0.0)
    with pytest.raises(ValueError):
        shifted_geo_mean([-1.0])


def _row(name, setting, status="optimal", time_s=1.0, nodes=10):
    return RunRow(name, setting, status, 0.0, nodes, time_s)


def test_single_run_quotients():
    rep = BenchmarkReport(["noconflict"], None, None, 0, [_row("p", "noconflict")])
    (agg,) = rep.aggregate()
    assert (agg.instances, agg.solved, agg.time_Q, agg.nodes_Q) == (1, 1, 1.0, 1.0)
    assert "1.000000" in rep.to_csv()


def test_quotients_against_baseline():
    rows = [_row("p", "noconflict", time_s=3.0, nodes=300), _row("p", "dualray-loc", time_s=1.0, nodes=100)]
    rep = BenchmarkReport(["noconflict", "dualray-loc"], None, None, 0, rows)
    base, loc = rep.aggregate()
    assert base.time_Q == 1.0 and base.nodes_Q == 1.0
    assert loc.time_Q == pytest.approx(1.0 / 3.0)
    assert loc.nodes_Q == pytest.approx(100.0 / 300.0)


def test_bracket_definition():
    settings = ["noconflict", "dualray"]
    rows = [
        _row("slow", "noconflict", time_s=120), _row("slow", "dualray", time_s=150),
        _row("mixed", "noconflict", time_s=50), _row("mixed", "dualray", time_s=150),
        _row("unsolved", "noconflict", "limit", 200), _row("unsolved", "dualray", "limit", 200),
        _row("capped", "noconflict", "limit", 20), _row("capped", "dualray", time_s=110),
    ]
    rep = BenchmarkReport(settings, 200.0, None, 0, rows, brackets=(0.0, 100.0))
    assert rep.bracket(100.0) == ["capped", "slow"]
    assert rep.bracket(0.0) == ["capped", "mixed", "slow"]
    rows = {a.setting: a for a in rep.aggregate(100.0)}
    assert rows["noconflict"].solved == 1 and rows["dualray"].solved == 2


def test_csv_header_and_schema(tmp_path):
    rows = [_row("p", "noconflict"), _row("p", "dualray")]
    rep = BenchmarkReport(["noconflict", "dualray"], 10.0, None, 0, rows)
    header = next(csv.reader(io.StringIO(rep.to_csv())))
    assert header == CSV_HEADER
    rep.write(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    jsonschema.validate(data, report_schema())
    assert data["baseline"] == "noconflict"
    bad = dict(data, runs=[{"instance": "p"}])
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, report_schema())


def test_strip_timing_removes_only_timing():
    rows = [_row("p", "noconflict", time_s=1.5)]
    a = BenchmarkReport(["noconflict"], None, None, 0, rows).to_csv()
    b = BenchmarkReport(["noconflict"], None, None, 0, [_row("p", "noconflict", time_s=7.25)]).to_csv()
    assert a != b and strip_timing(a) == strip_timing(b)
    assert "time_s" not in strip_timing(a).splitlines()[0]


def test_generation_is_deterministic(tmp_path):
    first = generate_corpus(3, 6, tmp_path / "one")
    second = generate_corpus(3, 6, tmp_path / "two")
    assert [p.name for p in first] == ["a000.json", "b001.json", "c002.json", "a003.json", "b004.json", "c005.json"]
    for p, q in zip(first, second):
        assert p.read_bytes() == q.read_bytes()
    assert load_instance(first[1]).name == "b001"
    with pytest.raises(ValueError):
        generate_instances(1, 0)


def test_family_sizes_stay_small():
    for inst in generate_instances(2, 12):
        assert inst.num_vars <= 12


def test_family_c_is_infeasible_at_root():
    for i in range(6):
        inst = family_c(np.random.default_rng([5, i]), f"c{i}", i)
        res = solve(inst, conflict=Setting.NOCONFLICT)
        assert res.status is Status.INFEASIBLE and res.nodes == 1


def test_family_b_needs_local_cuts_somewhere():
    inst = generate_instances(1, 2)[1]
    assert inst.name == "b001"
    bb = BranchAndBound(inst, Settings(conflict=Setting.DUALRAY_LOC))
    res = bb.solve()
    deep = [rec for rec in res.proofs if rec.depth >= 1 and rec.relaxed is None]
    assert deep
    root = [cid for cid in bb.pool.cuts if bb.pool.in_root_set(cid)]
    G, d = bb.pool.matrix(root, inst.num_vars)
    for rec in deep:
        lo, hi = bb.nodes[rec.node_id].box
        lp = LpProblem(np.vstack([inst.A, G]), np.concatenate([inst.b, d]), np.zeros(inst.num_vars), lo, hi,
                       [None] * len(inst.b) + root)
        assert lp_solve(lp).status is not LpStatus.INFEASIBLE


def test_run_suite_and_error_rows(tmp_path):
    generate_corpus(1, 3, tmp_path)
    (tmp_path / "broken.json").write_text("{ not json")
    rep = run_suite(tmp_path, ["noconflict", "dualray-loc"], node_limit=200)
    assert len(rep.rows) == 8
    broken = [r for r in rep.rows if r.instance == "broken"]
    assert len(broken) == 2 and all(r.status == "error" and r.message for r in broken)
    assert "broken" not in rep.bracket(0.0)
    agg = {a.setting: a for a in rep.aggregate()}
    assert agg["noconflict"].time_Q == 1.0 and agg["noconflict"].nodes_Q == 1.0
    with pytest.raises(ValueError):
        run_suite(tmp_path / "missing", ["noconflict"])


def test_parallel_matches_serial(tmp_path):
    generate_corpus(4, 4, tmp_path)
    one = run_suite(tmp_path, list(Setting), node_limit=100, workers=1)
    many = run_suite(tmp_path, list(Setting), node_limit=100, workers=3)
    assert strip_timing(one.to_csv()) == strip_timing(many.to_csv())
