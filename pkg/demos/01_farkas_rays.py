"""
Farkas rays from an infeasible LP
=================================

Two rows that cannot hold together over a box.  The simplex returns a ray
whose certificate value is positive, and the aggregated row shows why.
"""

import numpy as np

from minlpconf.simplex import LpProblem, LpStatus, certificate_value, solve

# x + y >= 3 and -x + y >= 1 on the box [0, 1] x [0, 1]
A = np.array([[1.0, 1.0], [-1.0, 1.0]])
b = np.array([3.0, 1.0])
lp = LpProblem(A, b, c=np.zeros(2), lower=np.zeros(2), upper=np.ones(2))

out = solve(lp)
print("status:", out.status.value)
assert out.status is LpStatus.INFEASIBLE

ray = out.ray
print("row multipliers y =", ray.y)
print("reduced costs   r =", ray.r)

# the certificate y'b + min over the box of r'x must be positive
value = certificate_value(ray.y, b, ray.r, lp.lower, lp.upper)
print("certificate value: %.4f" % value)

# aggregated row (y'A) x >= y'b can never be met inside the box
coefs, rhs = ray.y @ A, ray.y @ b
best = np.where(coefs > 0, coefs * lp.upper, coefs * lp.lower).sum()
print("aggregated row:", coefs, ">=", rhs, " but its maximum over the box is", best)
