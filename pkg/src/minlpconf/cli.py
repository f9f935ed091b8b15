"""Command line: ``solve``, ``bench``, ``gen`` and ``nlpcert verify``.

Exit codes: 0 solved or completed, 1 a limit was hit, 2 error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import harness, nlpcert
from .model import InstanceError, load_instance
from .solver import Setting, Settings, SolveResult, Status, solve

EXIT_OK, EXIT_LIMIT, EXIT_ERROR = 0, 1, 2


def _setting(text: str) -> Setting:
    try:
        return Setting.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown conflict setting {text!r}") from None


def _settings_list(text: str) -> list[Setting]:
    return [_setting(t.strip()) for t in text.split(",") if t.strip()]


def _num(v: float):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def result_dict(name: str, res: SolveResult) -> dict:
    st = res.stats
    return {
        "instance": name,
        "setting": res.setting.value,
        "status": res.status.value,
        "objective": _num(res.objective),
        "best_bound": _num(res.best_bound),
        "x": None if res.x is None else [float(v) for v in res.x],
        "nodes": st.nodes,
        "time_s": st.time,
        "lp_solves": st.lp_solves,
        "cuts": st.cuts,
        "confs_glb": st.confs_glb,
        "confs_loc": st.confs_loc,
        "proofs_rejected": st.proofs_rejected,
        "lift_histogram": st.lift_histogram,
    }


def cmd_solve(args) -> int:
    try:
        inst = load_instance(args.file)
    except InstanceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    settings = Settings(conflict=args.conflict, node_limit=args.node_limit, time_limit=args.time_limit,
                        prune_tol=args.tol, seed=args.seed)
    res = solve(inst, settings)
    data = result_dict(inst.name, res)
    print(f"{inst.name}: {data['status']}  objective {res.objective:.9g}  nodes {res.nodes}  "
          f"conflicts {res.stats.confs_glb}+{res.stats.confs_loc}  time {res.stats.time:.3f}s")
    if args.json:
        Path(args.json).write_text(json.dumps(data, indent=1) + "\n")
    if args.csv:
        flat = {k: v for k, v in data.items() if k not in ("x", "lift_histogram")}
        flat.update(data["lift_histogram"])
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(flat), lineterminator="\n")
            w.writeheader()
            w.writerow(flat)
    return EXIT_LIMIT if res.status is Status.LIMIT else EXIT_OK


def cmd_bench(args) -> int:
    try:
        report = harness.run_suite(args.dir, args.settings, time_limit=args.time_limit, node_limit=args.node_limit,
                                   seed=args.seed, workers=args.workers, brackets=args.brackets)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report.write(args.out)
    if args.json:
        report.write(args.json if str(args.json).endswith(".json") else f"{args.json}.json")
    for agg in report.aggregate(args.brackets[0]):
        print(f"{agg.setting:12s} solved {agg.solved}/{agg.instances}  sgm time {agg.sgm_time_s:.4f}s  "
              f"sgm nodes {agg.sgm_nodes:.2f}  time_Q {agg.time_Q:.3f}  nodes_Q {agg.nodes_Q:.3f}")
    if Setting.DUALRAY_LOC.value in report.settings:
        print("lift histogram:", report.lift_histogram())
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        paths = harness.generate_corpus(args.seed, args.count, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"wrote {len(paths)} instances to {args.out}")
    return EXIT_OK


def cmd_nlpcert_verify(args) -> int:
    try:
        sub = nlpcert.load_subproblem(args.subproblem)
        mult = nlpcert.load_multipliers(args.multipliers)
    except (OSError, ValueError, KeyError, InstanceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = nlpcert.verify(sub, mult["lam"], mult["mu"], mult["point"])
    print(json.dumps(report, indent=1))
    if report["status"] == "invalid-multipliers":
        return EXIT_ERROR
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="minlpconf", description="Spatial branch-and-bound with infeasibility analysis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance file")
    s.add_argument("file")
    s.add_argument("--conflict", type=_setting, default=Setting.NOCONFLICT,
                   help="none | graph | dualray | dualray-loc")
    s.add_argument("--time-limit", type=float, default=None)
    s.add_argument("--node-limit", type=int, default=None)
    s.add_argument("--tol", type=float, default=1e-9, help="pruning tolerance against the incumbent")
    s.add_argument("--seed", type=int, default=0)
    out = s.add_mutually_exclusive_group()
    out.add_argument("--json", metavar="OUT")
    out.add_argument("--csv", metavar="OUT")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run settings over a corpus directory")
    b.add_argument("dir")
    b.add_argument("--settings", type=_settings_list, default=list(Setting))
    b.add_argument("--time-limit", type=float, default=None)
    b.add_argument("--node-limit", type=int, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--brackets", type=lambda t: [float(v) for v in t.split(",")], default=[0.0],
                   help="comma-separated bracket thresholds in seconds")
    b.add_argument("--out", required=True, help="report path (.csv or .json)")
    b.add_argument("--json", metavar="OUT", help="additional JSON report")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen", help="generate the benchmark corpus")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    n = sub.add_parser("nlpcert", help="convex subproblem certificates")
    nsub = n.add_subparsers(dest="nlp_command", required=True)
    v = nsub.add_parser("verify", help="check multipliers against a subproblem")
    v.add_argument("subproblem")
    v.add_argument("multipliers")
    v.set_defaults(func=cmd_nlpcert_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
