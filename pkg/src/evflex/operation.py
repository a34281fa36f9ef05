"""Pools operating inside their flexibility areas, and the payments that follow.

Each operating day is a fresh scenario.  The pool connection caps are
replaced by the upper bounds of the areas and the program is re-solved per
scenario in operational mode, where every scenario carries its own draw and
pools maximize delivered-energy revenue minus the utility cost of what they
leave unserved, subject to the network limits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .conic import SolverError, SolverOptions
from .flexarea import FlexibilityArea
from .network import NetworkModel
from .scenarios import generate_scenarios
from .sopf import BuildOptions, build_sopf, solve_sopf, with_pool_caps
from .validate import PaymentReport, payment_analysis

log = logging.getLogger(__name__)


@dataclass(eq=False)
class OperationResult:
    payments: PaymentReport
    x_kw: np.ndarray  # (N, T, W) delivered power per task
    Phi_kwh: np.ndarray  # (S, W)
    draw_kw: np.ndarray  # (S, T, W) pool consumption
    statuses: list
    bound_gaps: np.ndarray  # (W,)


def operate_within_areas(net: NetworkModel, pools, area: FlexibilityArea, count: int, seed: int,
                         solver_options: SolverOptions | None = None, loss_price: float = 0.2) -> OperationResult:
    """Re-solve ``count`` fresh scenarios with pool caps set to ``area.upper_kw``."""
    if list(area.pool_ids) != [p.pool_id for p in pools]:
        raise ValueError("areas must list the pools in the same order")
    capped = with_pool_caps(pools, area.upper_kw)
    scen = generate_scenarios(capped, count, seed, net.periods, net.delta_t)
    opts = BuildOptions(loss_price=loss_price, operational=True)
    S, T, N = len(pools), net.periods, scen.n_tasks
    x = np.zeros((N, T, count))
    Phi = np.zeros((S, count))
    draw = np.zeros((S, T, count))
    statuses, gaps = [], np.zeros(count)
    for w in range(count):
        prog = build_sopf(net, capped, scen.subset([w]), opts)
        try:
            sol = solve_sopf(prog, solver_options)
        except SolverError:
            log.error("operating scenario %d could not be solved", w)
            raise
        x[:, :, w] = sol.x[:, :, 0]
        Phi[:, w] = sol.Phi[:, 0]
        draw[:, :, w] = sol.draws[:, :, 0]
        statuses.append(sol.status)
        gaps[w] = sol.bound_gap
    rep = payment_analysis(pools, scen.task_keys, x, Phi, net.delta_t)
    rep.meta.update(scenarios=count, seed=seed, beta=area.beta.tolist(), statuses=statuses,
                    max_bound_gap=float(gaps.max(initial=0.0)))
    return OperationResult(rep, x, Phi, draw, statuses, gaps)
