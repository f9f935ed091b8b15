"""Benchmark corpus, suite runner and report aggregation."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import jsonschema
import numpy as np

from .expr import Const, Product, Square, Sum, Var
from .model import Instance, InstanceError, LinearRow, NonlinearConstraint, load_instance, with_objective_expr, write_instance
from .solver import Setting, Settings, SolveResult, Status, solve

log = logging.getLogger(__name__)

TIME_SHIFT = 1.0
NODE_SHIFT = 100.0
FAMILIES = ("a", "b", "c")
BASELINE = Setting.NOCONFLICT

INSTANCE_COLUMNS = [
    "instance", "setting", "status", "objective", "nodes", "time_s", "confs_glb", "confs_loc",
    "lift_root", "lift_half", "lift_partial", "lift_none", "lp_infeasible", "proofs_rejected", "message",
]
AGGREGATE_COLUMNS = ["bracket_s", "setting", "instances", "solved", "sgm_time_s", "sgm_nodes", "time_Q", "nodes_Q"]
TIMING_COLUMNS = ("time_s", "sgm_time_s", "time_Q")
CSV_HEADER = ["kind"] + INSTANCE_COLUMNS + [c for c in AGGREGATE_COLUMNS if c not in INSTANCE_COLUMNS]


def shifted_geo_mean(values: Iterable[float], shift: float = 1.0) -> float:
    """``exp(mean(log(v + shift))) - shift``."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size == 0:
        raise ValueError("shifted geometric mean of an empty sequence")
    if shift <= 0:
        raise ValueError("shift must be positive")
    if np.any(vals < 0):
        raise ValueError("values must be non-negative")
    return float(np.exp(np.mean(np.log(vals + shift))) - shift)


# -- corpus -----------------------------------------------------------------------

def _bilinear(i: int, j: int, coef: float = 1.0):
    return Product(Const(coef), Product(Var(i), Var(j)))


def family_a(rng: np.random.Generator, name: str) -> Instance:
    """Convex MIQP: separable convex objective over integers, a ball
    constraint and linear coupling to continuous variables."""
    ni, nc = 3, 2
    n = ni + nc
    center = rng.integers(-2, 3, ni).astype(float) + rng.uniform(-0.5, 0.5, ni).round(2)
    weights = rng.integers(1, 4, ni).astype(float)
    obj = Sum(tuple(Product(Const(w), Square(Var(i) - float(c))) for i, (w, c) in enumerate(zip(weights, center))))
    obj = obj + Sum(tuple(Product(Const(float(rng.integers(1, 3))), Var(ni + k)) for k in range(nc)))
    ball_c = rng.integers(-1, 2, ni).astype(float)
    radius = round(float(rng.uniform(1.5, 2.5)), 2)
    ball = Sum(tuple(Square(Var(i) - float(c)) for i, c in enumerate(ball_c))) - radius ** 2
    rows = []
    for k in range(nc):
        i = int(rng.integers(0, ni))
        # w_k >= x_i - t  and  w_k >= t - x_i
        t = float(rng.integers(-2, 3))
        rows.append(LinearRow((i, ni + k), (-1.0, 1.0), -t))
        rows.append(LinearRow((i, ni + k), (1.0, 1.0), t))
    a = rng.integers(-2, 3, ni).astype(float)
    if a.any():
        rows.append(LinearRow(tuple(range(ni)), tuple(a), float(np.floor(a @ ball_c)) - 1.0))
    lower = [-3.0] * ni + [0.0] * nc
    upper = [3.0] * ni + [6.0] * nc
    return with_objective_expr(name, n, obj, rows, [ball], lower, upper, range(ni))


def family_b(rng: np.random.Generator, name: str, ny: int = 6, nx: int = 3, cap: int = 3) -> Instance:
    """Covering with bilinear capacities.

    Continuous demands ``y`` in [0, 1] must satisfy pairwise covering rows
    ``y_i + y_j >= a``; each group of demands is bounded by ``x_k t_k`` with
    integer ``x_k`` and continuous ``t_k`` sharing a budget.  Pairwise rows
    only bind jointly, so bound propagation misses infeasibilities that the
    LP detects through McCormick planes of ancestor nodes.
    """
    n = ny + 2 * nx
    rows = []
    for i, j in itertools.combinations(range(ny), 2):
        if rng.random() < 0.8:
            rows.append(LinearRow((i, j), (1.0, 1.0), float(np.round(rng.uniform(0.8, 1.4), 2))))
    budget = float(np.round(rng.uniform(1.2, 2.0), 2))
    rows.append(LinearRow(tuple(range(ny + nx, n)), tuple([-1.0] * nx), -budget))
    cons = []
    for k, group in enumerate(np.array_split(rng.permutation(ny), nx)):
        terms = [Var(int(i)) for i in sorted(group)] + [_bilinear(ny + k, ny + nx + k, -1.0)]
        cons.append(NonlinearConstraint(Sum(tuple(terms)), k))
    c = np.concatenate([np.zeros(ny), rng.integers(1, 5, nx), np.zeros(nx)]).astype(float)
    lower = np.zeros(n)
    upper = np.array([1.0] * ny + [float(cap)] * nx + [1.0] * nx)
    return Instance(name, n, c, tuple(rows), tuple(cons), lower, upper, frozenset(range(ny, ny + nx)))


def family_c(rng: np.random.Generator, name: str, index: int = 0) -> Instance:
    """Infeasible by construction; the root LP becomes infeasible after its
    own separation round."""
    if index % 2 == 0:
        # matched covering demand exceeds every reachable capacity
        ny, nx, cap = 4, 2, 2
        n = ny + 2 * nx
        a = np.round(rng.uniform(1.2, 1.6, ny // 2), 2)
        rows = [LinearRow((2 * p, 2 * p + 1), (1.0, 1.0), float(a[p])) for p in range(ny // 2)]
        budget = float(np.round(0.9 * a.sum() / cap - rng.uniform(0.05, 0.2), 2))
        rows.append(LinearRow(tuple(range(ny + nx, n)), tuple([-1.0] * nx), -budget))
        cons = []
        for k in range(nx):
            terms = [Var(2 * k), Var(2 * k + 1), _bilinear(ny + k, ny + nx + k, -1.0)]
            cons.append(NonlinearConstraint(Sum(tuple(terms)), k))
        c = np.concatenate([np.zeros(ny), rng.integers(1, 5, nx), np.zeros(nx)]).astype(float)
        upper = np.array([1.0] * ny + [float(cap)] * nx + [1.0] * nx)
        return Instance(name, n, c, tuple(rows), tuple(cons), np.zeros(n), upper, frozenset(range(ny, ny + nx)))
    # unit disc against a half-plane at distance 1 + gap, plus an integer offset
    gap = round(float(rng.uniform(0.3, 0.8)), 2)
    angle = round(float(rng.uniform(0, 2 * math.pi)), 3)
    d = np.array([math.cos(angle), math.sin(angle)])
    disc = Square(Var(0)) + Square(Var(1)) - 1.0
    rows = [LinearRow((0, 1), (float(d[0]), float(d[1])), 1.0 + gap), LinearRow((0, 2), (1.0, -1.0), -3.0)]
    return Instance(name, 3, np.array([1.0, 1.0, 1.0]), tuple(rows), (NonlinearConstraint(disc, 0),),
                    np.array([-3.0, -3.0, 0.0]), np.array([3.0, 3.0, 2.0]), frozenset({2}))


def generate_instances(seed: int, count: int) -> list[Instance]:
    """``count`` instances cycling through the families; instance ``i`` only
    depends on ``(seed, i)``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    out = []
    for i in range(count):
        fam = FAMILIES[i % len(FAMILIES)]
        rng = np.random.default_rng([seed, i])
        name = f"{fam}{i:03d}"
        if fam == "a":
            out.append(family_a(rng, name))
        elif fam == "b":
            out.append(family_b(rng, name))
        else:
            out.append(family_c(rng, name, i // len(FAMILIES)))
    return out


def generate_corpus(seed: int, count: int, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for inst in generate_instances(seed, count):
        path = out_dir / f"{inst.name}.json"
        write_instance(inst, path)
        paths.append(path)
    return paths


def family_of(name: str) -> str:
    return name[:1]


# -- suite ------------------------------------------------------------------------

@dataclass
class RunRow:
    instance: str
    setting: str
    status: str
    objective: float = math.nan
    nodes: int = 0
    time_s: float = 0.0
    confs_glb: int = 0
    confs_loc: int = 0
    lift_root: int = 0
    lift_half: int = 0
    lift_partial: int = 0
    lift_none: int = 0
    lp_infeasible: int = 0
    proofs_rejected: int = 0
    message: str = ""

    @property
    def solved(self) -> bool:
        return self.status in (Status.OPTIMAL.value, Status.INFEASIBLE.value)

    @classmethod
    def from_result(cls, name: str, res: SolveResult) -> "RunRow":
        st = res.stats
        return cls(name, res.setting.value, res.status.value, res.objective, st.nodes, st.time,
                   st.confs_glb, st.confs_loc, *st.lift_histogram.values(), st.lp_infeasible, st.proofs_rejected)


@dataclass
class AggregateRow:
    bracket_s: float
    setting: str
    instances: int
    solved: int
    sgm_time_s: float
    sgm_nodes: float
    time_Q: float
    nodes_Q: float


@dataclass
class BenchmarkReport:
    settings: list[str]
    time_limit: float | None
    node_limit: int | None
    seed: int
    rows: list[RunRow] = field(default_factory=list)
    brackets: tuple[float, ...] = (0.0,)

    @property
    def baseline(self) -> str:
        return BASELINE.value if BASELINE.value in self.settings else self.settings[0]

    def instances(self) -> list[str]:
        return sorted({r.instance for r in self.rows})

    def _by_instance(self) -> dict[str, dict[str, RunRow]]:
        out: dict[str, dict[str, RunRow]] = {}
        for r in self.rows:
            out.setdefault(r.instance, {})[r.setting] = r
        return out

    def bracket(self, t: float) -> list[str]:
        """Instances where every setting needs at least ``t`` seconds and at
        least one setting solves; runs that hit a limit count as the limit."""
        out = []
        for name, runs in sorted(self._by_instance().items()):
            if any(r.status == "error" for r in runs.values()) or len(runs) < len(self.settings):
                continue
            if all(self._time(r) >= t for r in runs.values()) and any(r.solved for r in runs.values()):
                out.append(name)
        return out

    def _time(self, r: RunRow) -> float:
        if not r.solved and self.time_limit is not None:
            return max(r.time_s, self.time_limit)
        return r.time_s

    def aggregate(self, t: float = 0.0) -> list[AggregateRow]:
        names = set(self.bracket(t))
        table = self._by_instance()
        sgm = {}
        for s in self.settings:
            runs = [table[nm][s] for nm in sorted(names)]
            if runs:
                sgm[s] = (shifted_geo_mean([self._time(r) for r in runs], TIME_SHIFT),
                          shifted_geo_mean([r.nodes for r in runs], NODE_SHIFT), sum(r.solved for r in runs))
            else:
                sgm[s] = (math.nan, math.nan, 0)
        base = sgm[self.baseline]
        out = []
        for s in self.settings:
            tm, nd, solved = sgm[s]
            out.append(AggregateRow(t, s, len(names), solved, tm, nd, _ratio(tm, base[0], s == self.baseline),
                                    _ratio(nd, base[1], s == self.baseline)))
        return out

    def lift_histogram(self, setting: str = Setting.DUALRAY_LOC.value) -> dict[str, int]:
        keys = ("lift_root", "lift_half", "lift_partial", "lift_none")
        return {k: sum(getattr(r, k) for r in self.rows if r.setting == setting) for k in keys}

    def total_nodes(self, setting: str, names: Sequence[str] | None = None) -> int:
        return sum(r.nodes for r in self.rows if r.setting == setting and (names is None or r.instance in names))

    # -- output ---------------------------------------------------------------

    def to_csv(self, include_timing: bool = True) -> str:
        buf = io.StringIO()
        header = [c for c in CSV_HEADER if include_timing or c not in TIMING_COLUMNS]
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in sorted(self.rows, key=lambda r: (r.instance, self.settings.index(r.setting))):
            w.writerow({"kind": "instance", **{k: _fmt(getattr(r, k)) for k in INSTANCE_COLUMNS}})
        for t in self.brackets:
            for a in self.aggregate(t):
                w.writerow({"kind": "aggregate", **{k: _fmt(getattr(a, k)) for k in AGGREGATE_COLUMNS}})
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "settings": list(self.settings),
            "baseline": self.baseline,
            "time_limit": self.time_limit,
            "node_limit": self.node_limit,
            "seed": self.seed,
            "runs": [{k: _json_num(getattr(r, k)) for k in INSTANCE_COLUMNS} for r in self.rows],
            "aggregates": [
                {k: _json_num(getattr(a, k)) for k in AGGREGATE_COLUMNS} for t in self.brackets for a in self.aggregate(t)
            ],
            "lift_histogram": self.lift_histogram(),
        }

    def write(self, path) -> None:
        path = Path(path)
        if path.suffix == ".json":
            data = self.to_dict()
            validate_report(data)
            path.write_text(json.dumps(data, indent=1) + "\n")
        else:
            path.write_text(self.to_csv())


def _ratio(value: float, base: float, is_base: bool) -> float:
    if is_base:
        return 1.0
    if not (math.isfinite(value) and math.isfinite(base)) or base == 0.0:
        return math.nan
    return value / base


def _fmt(v):
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.6f}"
    return v


def _json_num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def report_schema() -> dict:
    return json.loads(resources.files("minlpconf").joinpath("schemas/report.schema.json").read_text())


def validate_report(data: dict) -> None:
    jsonschema.validate(data, report_schema())


def _run_one(path: Path, settings: Sequence[Setting], time_limit, node_limit, seed) -> list[RunRow]:
    try:
        inst = load_instance(path)
    except InstanceError as exc:
        log.warning("skipping %s: %s", path.name, exc)
        return [RunRow(path.stem, s.value, "error", message=str(exc)) for s in settings]
    rows = []
    for s in settings:
        res = solve(inst, Settings(conflict=s, time_limit=time_limit, node_limit=node_limit, seed=seed))
        rows.append(RunRow.from_result(path.stem, res))
    return rows


def run_suite(corpus_dir, settings: Sequence[str | Setting] = tuple(Setting), time_limit: float | None = None,
              node_limit: int | None = None, seed: int = 0, workers: int = 1,
              brackets: Sequence[float] = (0.0,)) -> BenchmarkReport:
    """Solve every instance file of ``corpus_dir`` under every setting."""
    paths = sorted(Path(corpus_dir).glob("*.json"))
    if not paths:
        raise ValueError(f"no instance files in {corpus_dir}")
    parsed = [s if isinstance(s, Setting) else Setting.parse(s) for s in settings]
    if not parsed:
        raise ValueError("at least one setting is required")
    report = BenchmarkReport([s.value for s in parsed], time_limit, node_limit, seed, brackets=tuple(brackets))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            batches = list(pool.map(lambda p: _run_one(p, parsed, time_limit, node_limit, seed), paths))
    else:
        batches = [_run_one(p, parsed, time_limit, node_limit, seed) for p in paths]
    for batch in batches:
        report.rows.extend(batch)
    return report


def strip_timing(csv_text: str) -> str:
    """The CSV without its timing columns, for run-to-run comparison."""
    reader = csv.DictReader(io.StringIO(csv_text))
    keep = [c for c in reader.fieldnames or [] if c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keep, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for row in reader:
        w.writerow(row)
    return buf.getvalue()
