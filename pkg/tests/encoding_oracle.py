"""Independent evaluation of the utility encoding with scipy's MILP solver."""

import warnings

import numpy as np
from scipy.optimize import Bounds, LinearConstraint, milp

from evflex.program import ProgramBuilder
from evflex.utility import UtilityEncoding, UtilityFunction, encode_utility


def encoding_min_milp(u: UtilityFunction, phi: float, enc: UtilityEncoding | None = None) -> float:
    """min Z over the encoding with Phi fixed, solved by HiGHS branch-and-cut."""
    enc = enc or encode_utility(u)
    n = enc.n_vars
    lb, ub = np.zeros(n), np.ones(n)
    lb[enc.z], ub[enc.z] = -np.inf, np.inf
    lb[enc.phi] = ub[enc.phi] = phi
    integrality = np.zeros(n)
    integrality[enc.y] = 1
    c = np.zeros(n)
    c[enc.z] = 1.0
    cons = [LinearConstraint(enc.eq_matrix, enc.eq_rhs, enc.eq_rhs),
            LinearConstraint(enc.le_matrix, -np.inf, enc.le_rhs)]
    # a binary at 1e-6 would otherwise count as integral and dodge a fixed charge, hence the tight
    # tolerance. At that tolerance HiGHS sometimes stops on a worse vertex, with or without presolve
    # and on different inputs, so both runs are made and the best verified point wins.
    best = np.inf
    for presolve in (True, False):
        with warnings.catch_warnings():  # HiGHS options scipy does not know are passed through verbatim
            warnings.simplefilter("ignore", RuntimeWarning)
            res = milp(c, constraints=cons, bounds=Bounds(lb, ub), integrality=integrality,
                       options={"mip_rel_gap": 0.0, "mip_feasibility_tolerance": 1e-10, "presolve": presolve})
        if res.success and _feasible(enc, res.x):
            best = min(best, float(res.fun))
    return best


def _feasible(enc: UtilityEncoding, x: np.ndarray, tol: float = 1e-9) -> bool:
    y = x[enc.y]
    return bool(np.all(np.abs(y - np.round(y)) <= tol)
                and np.all(np.abs(enc.eq_matrix @ x - enc.eq_rhs) <= tol)
                and np.all(enc.le_matrix @ x - enc.le_rhs <= tol))


def encoding_program(u: UtilityFunction, phi: float):
    """The encoding as a conic program (no cones) for the in-house solvers."""
    enc = encode_utility(u)
    b = ProgramBuilder()
    lb, ub = np.zeros(enc.n_vars), np.ones(enc.n_vars)
    lb[enc.z], ub[enc.z] = -1e6, 1e6
    lb[enc.phi] = ub[enc.phi] = phi
    binary = np.zeros(enc.n_vars, bool)
    binary[enc.y] = True
    cols = b.add_var("v", enc.n_vars, lb=lb, ub=ub)
    for kind, M, rhs in (("eq", enc.eq_matrix, enc.eq_rhs), ("le", enc.le_matrix, enc.le_rhs)):
        r, c = np.nonzero(M)
        b.add_rows(kind, kind, M.shape[0], r, cols[c], M[r, c], rhs)
    b.add_objective(cols[enc.z], 1.0)
    prog = b.finish()
    prog.binary[:] = binary
    return prog, enc
