"""Branch-and-bound over the binary columns of a conic program.

Exact mode is best-bound search with most-fractional branching (ties go to
the lowest column).  Heuristic mode solves the relaxation once, fixes each
segment-selection group to the segment that contains the relaxed energy
value and re-solves; the relaxation value is reported as the bound.

Segment groups are read from ``prog.meta["segment_groups"]``: a list of
dicts with keys ``y`` (binary columns, one per segment), ``phi`` (column of
the encoded argument), ``alpha`` (breakpoints), ``u_left`` and ``u_right``
(segment values at their left/right breakpoints).
"""

from __future__ import annotations

import heapq
import logging
import time
import warnings

import numpy as np

from .ipm import SolveReport, SolverOptions, cone_shortfall, solve_socp

log = logging.getLogger(__name__)


def _gap_ok(incumbent: float, bound: float, opts: SolverOptions) -> bool:
    gap = incumbent - bound
    return gap <= opts.bb_abs_gap or gap <= opts.bb_rel_gap * abs(incumbent)


def _polish(prog, x, lb, ub, opts):
    """Round the binaries of ``x``, fix them and re-solve the continuous part."""
    b = np.flatnonzero(prog.binary)
    lb, ub = lb.copy(), ub.copy()
    r = np.round(x[b])
    lb[b] = ub[b] = r
    return solve_socp(prog, opts, lb=lb, ub=ub)


def choose_segments(group: dict, phi: float, tol: float = 1e-7) -> np.ndarray:
    """0/1 selection of the segment holding ``phi``; at a breakpoint the cheaper side wins."""
    alpha = np.asarray(group["alpha"], float)
    K = alpha.size - 1
    y = np.zeros(K)
    scale = tol * max(1.0, alpha[-1])
    if phi <= scale:
        return y
    k = int(np.searchsorted(alpha, phi - scale, side="left"))  # alpha[k-1] < phi <= alpha[k]
    k = min(max(k, 1), K)
    if k < K and abs(phi - alpha[k]) <= scale:
        if group["u_left"][k] < group["u_right"][k - 1]:
            k += 1
    y[k - 1] = 1.0
    return y


def _heuristic(prog, opts, t0):
    x_rel, rel = solve_socp(prog, opts, relax=True)
    if not rel.ok:
        rel.mode = "heuristic"
        return None, rel
    groups = prog.meta.get("segment_groups")
    lb, ub = prog.lb.copy(), prog.ub.copy()
    if groups:
        for g in groups:
            y = choose_segments(g, float(x_rel[g["phi"]]), opts.int_tol)
            lb[g["y"]] = ub[g["y"]] = y
        x, rep = solve_socp(prog, opts, lb=lb, ub=ub)
    else:
        x, rep = _polish(prog, x_rel, lb, ub, opts)
    bound = rel.primal_objective
    rep.mode = "heuristic"
    rep.nodes = 1
    rep.best_bound = bound
    rep.solve_time = time.perf_counter() - t0
    if rep.ok:
        rep.bound_gap = max(0.0, rep.primal_objective - bound)
        if not _gap_ok(rep.primal_objective, bound, opts):
            rep.status = "gap_limit"
            rep.message = f"heuristic incumbent within {rep.bound_gap:.3g} of the relaxation bound"
    return x, rep


def solve_misocp(prog, opts: SolverOptions | None = None):
    """Minimize a program with binary columns; returns ``(x, SolveReport)``."""
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    free_bin = np.flatnonzero(prog.binary & (prog.lb < prog.ub))
    if free_bin.size == 0:
        x, rep = solve_socp(prog, opts, relax=True)
        rep.nodes = 1
        rep.best_bound = rep.primal_objective
        return x, rep
    if opts.heuristic_only or free_bin.size > opts.exact_binary_cap:
        if not opts.heuristic_only:
            warnings.warn(f"{free_bin.size} binaries exceed the exact cap of {opts.exact_binary_cap}; "
                          "using the fix-and-resolve heuristic", stacklevel=2)
        return _heuristic(prog, opts, t0)

    inc_x, inc_val = None, np.inf
    trace = []
    heap: list = []
    seq = 0
    nodes = 0
    iters = 0

    def evaluate(lb, ub):
        nonlocal nodes, iters, inc_x, inc_val
        nodes += 1
        x, rep = solve_socp(prog, opts, lb=lb, ub=ub, relax=True)
        iters += rep.iterations
        if not rep.ok:
            return None, rep
        frac = np.minimum(x[free_bin] - np.floor(x[free_bin]), np.ceil(x[free_bin]) - x[free_bin])
        if np.all(frac <= opts.int_tol):
            xp, rp = _polish(prog, x, lb, ub, opts)
            iters += rp.iterations
            if rp.ok and rp.primal_objective < inc_val:
                inc_x, inc_val = xp, rp.primal_objective
                trace.append(inc_val)
            return None, rep
        return x, rep

    root_x, root = evaluate(prog.lb.copy(), prog.ub.copy())
    if not root.ok:
        root.mode = "exact"
        root.nodes = nodes
        return None, root
    root_bound = root.primal_objective
    if root_x is not None:
        heap.append((root_bound, seq, prog.lb.copy(), prog.ub.copy(), root_x))
    status = "optimal"
    while heap:
        bound = heap[0][0]
        if inc_x is not None and _gap_ok(inc_val, bound, opts):
            break
        if nodes >= opts.node_limit or (opts.time_limit and time.perf_counter() - t0 > opts.time_limit):
            status = "gap_limit"
            break
        bound, _, lb, ub, x = heapq.heappop(heap)
        if bound >= inc_val:
            continue
        frac = np.minimum(x[free_bin] - np.floor(x[free_bin]), np.ceil(x[free_bin]) - x[free_bin])
        j = int(free_bin[np.argmax(frac)])
        for val in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = val
            cx, crep = evaluate(clb, cub)
            if cx is not None and crep.primal_objective < inc_val:
                seq += 1
                heapq.heappush(heap, (crep.primal_objective, seq, clb, cub, cx))

    best_bound = min(heap[0][0], inc_val) if heap else inc_val
    if inc_x is None:
        st = "infeasible" if status == "optimal" else status
        return None, SolveReport(st, np.nan, np.nan, iters, nodes=nodes, best_bound=best_bound, mode="exact",
                                 solve_time=time.perf_counter() - t0, message="no integral point found")
    best_bound = min(max(best_bound, root_bound), inc_val)
    return inc_x, SolveReport(
        status, inc_val, np.nan, iters, nodes=nodes, bound_gap=max(0.0, inc_val - best_bound),
        best_bound=best_bound, cone_residual=cone_shortfall(prog, inc_x),
        solve_time=time.perf_counter() - t0, mode="exact", incumbents=trace)
