"""Interior-point and branch-and-bound solvers for the assembled conic programs."""

from .bnb import solve_misocp
from .ipm import SolveReport, SolverError, SolverOptions, solve_socp

__all__ = ["SolveReport", "SolverError", "SolverOptions", "solve_misocp", "solve_socp"]
