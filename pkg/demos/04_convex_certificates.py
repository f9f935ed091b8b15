"""
Certificates for infeasible convex subproblems
==============================================

Two disjoint discs.  Multipliers from dual ascent aggregate the constraints
into one convex inequality that has no solution in the box; at its minimizer
the gradient cuts admit the same multipliers as a linear Farkas ray.
"""

import numpy as np

from minlpconf.expr import Square, variables
from minlpconf.nlpcert import (
    ConvexSubproblem,
    aggregate_inequality,
    dual_ascent_multipliers,
    farkas_residuals,
    linearized_certificate,
    verify,
)

x, y = variables(2)
g1 = Square(x + 1.5) + Square(y) - 1.0   # disc around (-1.5, 0)
g2 = Square(x - 1.5) + Square(y) - 1.0   # disc around (1.5, 0)
sub = ConvexSubproblem(2, (g1, g2), lower=[-5, -5], upper=[5, 5])

mult = dual_ascent_multipliers(sub)
print("multipliers:", np.round(mult.lam, 4))

agg = aggregate_inequality(sub, mult.lam)
print("minimum of the aggregate over the box: %.4f at %s" % (agg.min_value, np.round(agg.argmin, 4)))
print("certified infeasible:", agg.certified)

res = farkas_residuals(sub, agg.argmin, mult.lam)
print("stationarity residual %.2e, linearized value %.4f" % (res.stationarity, res.value))
print("certificate of the gradient cuts: %.4f" % linearized_certificate(sub, agg.argmin, mult.lam))

# overlapping discs: no multipliers can certify
g3 = Square(x - 0.5) + Square(y) - 1.0
close = ConvexSubproblem(2, (g1, g3), lower=[-5, -5], upper=[5, 5])
print("\noverlapping discs:", verify(close, dual_ascent_multipliers(close, iters=100).lam)["status"])
