"""Spatial branch-and-bound for small MINLPs with Farkas-proof based
conflict analysis, locally valid proofs and a convex certificate checker."""

from .model import Instance, InstanceError, LinearRow, NonlinearConstraint, load_instance, write_instance
from .simplex import LpProblem, LpStatus, certificate_value
from .solver import Setting, Settings, SolveResult, Status, solve

__all__ = [
    "Instance",
    "InstanceError",
    "LinearRow",
    "NonlinearConstraint",
    "load_instance",
    "write_instance",
    "LpProblem",
    "LpStatus",
    "certificate_value",
    "Setting",
    "Settings",
    "SolveResult",
    "Status",
    "solve",
]

__version__ = "0.1.0"
