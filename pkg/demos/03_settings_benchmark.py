"""
Comparing the four settings on a generated corpus
=================================================

Shifted geometric means of time and nodes, and quotients against the run
without conflict analysis.
"""

import tempfile
from pathlib import Path

from minlpconf.harness import generate_corpus, run_suite

workdir = Path(tempfile.mkdtemp())
paths = generate_corpus(seed=1, count=15, out_dir=workdir)
print("generated", len(paths), "instances in", workdir)

report = run_suite(workdir, ["noconflict", "confgraph", "dualray", "dualray-loc"], node_limit=2000)

print("\n%-12s %7s %10s %10s %7s %7s" % ("setting", "solved", "sgm time", "sgm nodes", "time_Q", "nodes_Q"))
for agg in report.aggregate():
    print("%-12s %3d/%-3d %10.4f %10.2f %7.3f %7.3f" % (agg.setting, agg.solved, agg.instances,
                                                       agg.sgm_time_s, agg.sgm_nodes, agg.time_Q, agg.nodes_Q))

print("\nnode totals per setting:")
for s in report.settings:
    print("  %-12s %d" % (s, report.total_nodes(s)))
print("lift histogram (dualray-loc):", report.lift_histogram())

report.write(workdir / "report.csv")
report.write(workdir / "report.json")
print("\nreports written to", workdir)
