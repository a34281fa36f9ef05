"""Two-stage stochastic optimal power flow for EV charging pools.

First stage: one reserve ``p[s, t]`` per pool and period, shared by all
scenarios.  Second stage, per scenario: the mismatch ``rho``, task schedules
``x``, energy not served ``phi``/``Phi``, the utility encoding and the
branch-flow network state (squared voltages ``V2``, squared currents ``I2``
and receiving-end flows ``P``, ``Q``) with the current/voltage relation
relaxed to a rotated cone ``V2_j * I2_ij >= P_ij^2 + Q_ij^2``.

Units: pool and task powers are kW, energies kWh, network quantities pu.
Pool draws enter the nodal balance as ``(p + rho) / s_base_kw``.

Column count of :func:`build_sopf` (``S`` pools, ``N`` tasks, ``T`` periods,
``W`` scenarios, ``B`` nodes, ``L`` branches, ``K_s`` utility segments)::

    S*T                                  reserves (S*T*W in operational mode)
  + W * (S*T + N*T + N + sum_s (3*K_s + 3))
  + W * T * (B + 3*L)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .network import NetworkModel
from .pools import ChargingPoolSpec
from .program import Block, ConeBlock, ConicProgram, ProgramBuilder
from .scenarios import ScenarioSet
from .utility import encode_utility, is_convex_shortcut_eligible

log = logging.getLogger(__name__)


class ModelError(ValueError):
    """Inputs that cannot be assembled into a consistent program."""


class ExtractionError(ValueError):
    """A solver point violates a bound or row beyond tolerance."""


@dataclass(frozen=True)
class BuildOptions:
    # price of network losses, currency/kWh; any positive value makes the
    # cone relaxation tight at the optimum
    loss_price: float = 0.2
    convex_shortcut: bool = True  # drop binaries when every utility is convex
    operational: bool = False  # one reserve per scenario (scenarios decouple)
    asap_weight: float = 0.0  # currency/kWh per period of delay
    fix_shortfall: bool = False  # force phi = 0 (all energy served)
    fix_reserve: float | None = None  # fix p to this value (kW)
    v_bounds: tuple | None = None  # override (v_min, v_max) in pu
    current_scale: float = 1.0  # multiply branch ampacities
    include_reserve_revenue: bool = True
    include_utility_cost: bool = True

    def __post_init__(self):
        if self.loss_price < 0 or self.asap_weight < 0:
            raise ValueError("loss_price and asap_weight must be nonnegative")
        if self.current_scale <= 0:
            raise ValueError("current_scale must be positive")


def count_columns(net: NetworkModel, pools, scenarios: ScenarioSet, operational: bool = False) -> int:
    """Closed-form column count matching :func:`build_sopf`."""
    S, T, W = len(pools), net.periods, scenarios.count
    N = scenarios.n_tasks
    util = sum(3 * p.utility.kappa + 3 for p in pools)
    first = S * T * (W if operational else 1)
    return first + W * (S * T + N * T + N + util) + W * T * (net.n_nodes + 3 * net.n_branches)


def _task_pool_index(pools, scenarios: ScenarioSet) -> np.ndarray:
    ids = {p.pool_id: k for k, p in enumerate(pools)}
    out = np.empty(scenarios.n_tasks, dtype=np.int64)
    for n, (pool_id, task_id) in enumerate(scenarios.task_keys):
        if pool_id not in ids:
            raise ModelError(f"task {task_id} belongs to unknown pool {pool_id}")
        out[n] = ids[pool_id]
    return out


def build_sopf(net: NetworkModel, pools, scenarios: ScenarioSet, options: BuildOptions | None = None) -> ConicProgram:
    opts = options or BuildOptions()
    pools = list(pools)
    T, W, dt = net.periods, scenarios.count, net.delta_t
    if scenarios.horizon != T:
        raise ModelError(f"scenario horizon {scenarios.horizon} does not match network periods {T}")
    if abs(scenarios.delta_t - dt) > 1e-12:
        raise ModelError("scenario and network period lengths differ")
    for p in pools:
        p.check_against(net)
    S, N = len(pools), scenarios.n_tasks
    B, L = net.n_nodes, net.n_branches
    pool_of = _task_pool_index(pools, scenarios)
    if np.any(scenarios.departure > T) or np.any(scenarios.arrival < 0):
        raise ModelError("task window outside the planning horizon")
    pi = scenarios.probabilities
    s_kw = net.s_base_kw
    b = ProgramBuilder()

    # -- first stage --------------------------------------------------------
    p_ub = np.inf if opts.fix_reserve is None else opts.fix_reserve
    p_lb = 0.0 if opts.fix_reserve is None else opts.fix_reserve
    if opts.operational:
        p = b.add_var("p", (S, T, W), lb=p_lb, ub=p_ub, dims=("pool", "period", "scenario"))
        p_stw = p
    else:
        p = b.add_var("p", (S, T), lb=p_lb, ub=p_ub, dims=("pool", "period"))
        p_stw = np.broadcast_to(p[:, :, None], (S, T, W))

    # -- pools and tasks ----------------------------------------------------
    rho = b.add_var("rho", (S, T, W), lb=0.0, dims=("pool", "period", "scenario"))
    t_idx = np.arange(T)
    a, d = scenarios.arrival, scenarios.departure
    window = (t_idx[None, :, None] >= a[:, None, :]) & (t_idx[None, :, None] < d[:, None, :])
    x_ub = np.where(window, scenarios.x_max[:, None, None], 0.0)
    x = b.add_var("x", (N, T, W), lb=0.0, ub=x_ub, dims=("task", "period", "scenario"))
    phi = b.add_var("phi", (N, W), lb=0.0, ub=0.0 if opts.fix_shortfall else np.inf, dims=("task", "scenario"))

    n_stw = S * T * W
    flat = np.arange(n_stw)
    # p + rho - sum_n x = 0
    xr = (pool_of[:, None, None] * T * W + t_idx[None, :, None] * W + np.arange(W)[None, None, :])
    xr = np.broadcast_to(xr, (N, T, W))
    b.add_rows("eq", "pool_balance", (S, T, W),
               np.concatenate([flat, flat, xr.ravel()]),
               np.concatenate([p_stw.ravel(), rho.ravel(), x.ravel()]),
               np.concatenate([np.ones(2 * n_stw), -np.ones(N * T * W)]), 0.0,
               dims=("pool", "period", "scenario"))
    p_max = np.stack([pl.p_max for pl in pools]) if S else np.zeros((0, T))
    b.add_rows("le", "pool_capacity", (S, T, W), np.concatenate([flat, flat]),
               np.concatenate([p_stw.ravel(), rho.ravel()]), 1.0,
               np.broadcast_to(p_max[:, :, None], (S, T, W)), dims=("pool", "period", "scenario"))
    # sum_t x dt + phi = E
    nw = np.arange(N * W).reshape(N, W)
    b.add_rows("eq", "task_energy", (N, W),
               np.concatenate([np.broadcast_to(nw[:, None, :], (N, T, W)).ravel(), nw.ravel()]),
               np.concatenate([x.ravel(), phi.ravel()]),
               np.concatenate([np.full(N * T * W, dt), np.ones(N * W)]), scenarios.energy,
               dims=("task", "scenario"))

    # -- utilities ------------------------------------------------------------
    Z = b.add_var("Z", (S, W), lb=-np.inf, dims=("pool", "scenario"))
    Phi = b.add_var("Phi", (S, W), lb=0.0, dims=("pool", "scenario"))
    sw = np.arange(S * W).reshape(S, W)
    b.add_rows("eq", "pool_shortfall", (S, W),
               np.concatenate([sw.ravel(), sw[pool_of].ravel()]),
               np.concatenate([Phi.ravel(), phi.ravel()]),
               np.concatenate([np.ones(S * W), -np.ones(N * W)]), 0.0, dims=("pool", "scenario"))

    relax_all = opts.fix_shortfall or (
        opts.convex_shortcut and all(is_convex_shortcut_eligible(pl.utility) for pl in pools))
    groups = []
    for s, pl in enumerate(pools):
        enc = encode_utility(pl.utility)
        K = enc.kappa
        lam_lo = b.add_var(f"lam_lo:{pl.pool_id}", (K + 1, W), lb=0.0, dims=("breakpoint", "scenario"))
        lam_hi = b.add_var(f"lam_hi:{pl.pool_id}", (K, W), lb=0.0, dims=("breakpoint", "scenario"))
        y = b.add_var(f"y:{pl.pool_id}", (K, W), lb=0.0, ub=1.0, binary=not relax_all,
                      dims=("segment", "scenario"))
        # local encoding column -> program columns, shape (nv, W)
        local = np.empty((enc.n_vars, W), dtype=np.int64)
        local[enc.lam_lo] = lam_lo
        local[enc.lam_hi] = lam_hi
        local[enc.y] = y
        local[enc.z] = Z[s]
        local[enc.phi] = Phi[s]
        for kind, M, rhs, labels in (("eq", enc.eq_matrix, enc.eq_rhs, enc.eq_labels),
                                     ("le", enc.le_matrix, enc.le_rhs, enc.le_labels)):
            r, c = np.nonzero(M)
            nr = M.shape[0]
            rows = (r[:, None] * W + np.arange(W)[None, :]).ravel()
            cols = local[c].ravel()
            vals = np.repeat(M[r, c], W)
            b.add_rows(kind, f"utility_{kind}:{pl.pool_id}", (nr, W), rows, cols, vals,
                       np.repeat(rhs, W).reshape(nr, W), dims=(",".join(labels), "scenario"))
        if not relax_all:
            u = pl.utility
            for w in range(W):
                groups.append(dict(y=y[:, w].copy(), phi=int(Phi[s, w]), alpha=u.alpha,
                                   u_left=u.u_left, u_right=u.u_right, pool=pl.pool_id, scenario=w))

    # -- network ------------------------------------------------------------
    vmin, vmax = opts.v_bounds if opts.v_bounds is not None else (net.v_min, net.v_max)
    v2_lb = np.full((B, T, W), vmin**2)
    v2_ub = np.full((B, T, W), vmax**2)
    v2_lb[net.root] = v2_ub[net.root] = net.v_substation**2
    V2 = b.add_var("V2", (B, T, W), lb=v2_lb, ub=v2_ub, dims=("node", "period", "scenario"))
    i_cap = (net.i_max * opts.current_scale) ** 2
    I2 = b.add_var("I2", (L, T, W), lb=0.0, ub=np.broadcast_to(i_cap[:, None, None], (L, T, W)),
                   dims=("branch", "period", "scenario"))
    P = b.add_var("P", (L, T, W), lb=-np.inf, dims=("branch", "period", "scenario"))
    Q = b.add_var("Q", (L, T, W), lb=-np.inf, dims=("branch", "period", "scenario"))

    # nodal balance at every non-substation node j:
    #   P_in(j) - sum_children (P + R I2) - draw_j = demand_j
    nonroot = np.array([i for i in range(B) if i != net.root], dtype=np.int64)
    row_of_node = -np.ones(B, dtype=np.int64)
    row_of_node[nonroot] = np.arange(nonroot.size)
    tw = np.arange(T * W)
    fr, to = net.from_idx, net.to_idx
    pool_node = np.array([net.index(pl.node) for pl in pools], dtype=np.int64)

    def balance(name, flow, loss_coef, demand, with_pools):
        rows, cols, vals = [], [], []
        nrw = T * W
        # incoming flow at the child node
        rows.append((row_of_node[to][:, None] * nrw + tw).ravel())
        cols.append(flow.reshape(L, -1).ravel())
        vals.append(np.ones(L * nrw))
        # outgoing flow and losses at the parent node (substation has no row)
        out = row_of_node[fr] >= 0
        r_out = (row_of_node[fr][out][:, None] * nrw + tw).ravel()
        rows += [r_out, r_out]
        cols += [flow.reshape(L, -1)[out].ravel(), I2.reshape(L, -1)[out].ravel()]
        vals += [-np.ones(r_out.size), -np.repeat(loss_coef[out], nrw)]
        if with_pools and S:
            at = row_of_node[pool_node]
            if np.any(at < 0):
                raise ModelError("charging pools cannot sit at the substation node")
            r_p = np.broadcast_to((at[:, None] * nrw + tw)[:, :], (S, nrw)).ravel()
            rows += [r_p, r_p]
            cols += [p_stw.reshape(S, -1).ravel(), rho.reshape(S, -1).ravel()]
            vals += [np.full(r_p.size, -1.0 / s_kw)] * 2
        rhs = np.broadcast_to(demand[nonroot][:, :, None], (nonroot.size, T, W))
        b.add_rows("eq", name, (nonroot.size, T, W), np.concatenate(rows), np.concatenate(cols),
                   np.concatenate(vals), rhs, dims=("node", "period", "scenario"))

    balance("active_balance", P, net.r, net.p_demand, True)
    balance("reactive_balance", Q, net.x, net.q_demand, False)

    # V2_j - V2_i + 2 (R P + X Q) + (R^2 + X^2) I2 = 0
    ltw = np.broadcast_to(np.arange(L * T * W).reshape(L, T * W), (L, T * W)).ravel()
    z2 = net.r**2 + net.x**2
    rep = lambda v: np.repeat(v, T * W)  # noqa: E731
    b.add_rows("eq", "voltage_drop", (L, T, W), np.tile(ltw, 5),
               np.concatenate([V2[to].ravel(), V2[fr].ravel(), P.ravel(), Q.ravel(), I2.ravel()]),
               np.concatenate([np.ones(ltw.size), -np.ones(ltw.size), rep(2 * net.r), rep(2 * net.x), rep(z2)]),
               0.0, dims=("branch", "period", "scenario"))
    b.add_cones("branch_current", (L, T, W),
                np.stack([np.broadcast_to(V2[to], (L, T, W)), I2, P, Q], axis=-1).reshape(-1, 4))

    # -- objective ------------------------------------------------------------
    if opts.include_utility_cost:
        b.add_objective(Z, np.broadcast_to(pi[None, :], (S, W)))
    price = np.stack([pl.energy_price for pl in pools]) if S else np.zeros((0, T))
    if opts.include_reserve_revenue and S:
        if opts.operational:
            b.add_objective(p, -(price[:, :, None] * dt) * pi[None, None, :])
        else:
            b.add_objective(p, -price * dt)
    if opts.loss_price > 0:
        coef = opts.loss_price * s_kw * dt * net.r[:, None, None] * pi[None, None, :]
        b.add_objective(I2, np.broadcast_to(coef, (L, T, W)))
    if opts.asap_weight > 0:
        late = np.arange(T, dtype=float)  # later periods cost more
        b.add_objective(x, np.broadcast_to(opts.asap_weight * dt * late[None, :, None] * pi[None, None, :], (N, T, W)))

    meta = dict(
        kind="sopf", periods=T, scenarios=W, delta_t=dt, s_base_kw=s_kw,
        pool_ids=[pl.pool_id for pl in pools], pool_nodes=[pl.node for pl in pools],
        task_keys=[list(k) for k in scenarios.task_keys], node_ids=list(net.node_ids),
        branch_ends=[list(e) for e in net.branch_ends], probabilities=pi.tolist(),
        loss_price=opts.loss_price, operational=opts.operational, binaries_relaxed=bool(relax_all),
        v_bounds=(float(vmin), float(vmax)), current_scale=opts.current_scale,
        units=dict(p="kW", rho="kW", x="kW", phi="kWh", Phi="kWh", Z="currency", V2="pu", I2="pu", P="pu", Q="pu"),
        segment_groups=groups,
    )
    prog = b.finish(meta)
    if prog.n_vars != count_columns(net, pools, scenarios, opts.operational):
        raise AssertionError("column count disagrees with the documented closed form")
    return prog


def base_case_options(pools, asap_epsilon: float = 1e-6) -> BuildOptions:
    """Options for uncontrolled charging: limits nonbinding, no shortfall,
    every task charged as early as its pool capacity allows."""
    scale = max([float(np.max(pl.energy_price)) for pl in pools] + [1.0])
    return BuildOptions(loss_price=0.0, convex_shortcut=True, asap_weight=asap_epsilon * scale,
                        fix_shortfall=True, fix_reserve=0.0, v_bounds=(0.5, 1.5), current_scale=10.0,
                        include_reserve_revenue=False, include_utility_cost=False)


def base_case_program(net, pools, scenarios, asap_epsilon: float = 1e-6) -> ConicProgram:
    prog = build_sopf(net, pools, scenarios, base_case_options(pools, asap_epsilon))
    prog.meta["kind"] = "base"
    return prog


# ---------------------------------------------------------------------------
# solution extraction


@dataclass(eq=False)
class SopfSolution:
    status: str
    objective: float  # full program objective, including the loss term
    objective_terms: dict  # flexibility_cost, reserve_revenue, loss_cost, planning_objective
    p: np.ndarray  # kW; (S, T) or (S, T, W) in operational mode
    rho: np.ndarray  # kW (S, T, W)
    x: np.ndarray  # kW (N, T, W)
    phi: np.ndarray  # kWh (N, W)
    Phi: np.ndarray  # kWh (S, W)
    Z: np.ndarray  # (S, W)
    V2: np.ndarray  # (B, T, W)
    I2: np.ndarray  # (L, T, W)
    P: np.ndarray
    Q: np.ndarray
    cone_gaps: np.ndarray  # (L, T, W)
    bound_gap: float
    probabilities: np.ndarray
    meta: dict = field(repr=False, default_factory=dict)
    report: object = None

    @property
    def s_base_kw(self) -> float:
        return self.meta["s_base_kw"]

    @property
    def p_pu(self) -> np.ndarray:
        return self.p / self.s_base_kw

    @property
    def rho_pu(self) -> np.ndarray:
        return self.rho / self.s_base_kw

    @property
    def pool_ids(self) -> list:
        return list(self.meta["pool_ids"])

    @property
    def draws(self) -> np.ndarray:
        """Realized pool consumption p + rho, kW (S, T, W)."""
        p = self.p if self.p.ndim == 3 else self.p[:, :, None]
        return p + self.rho

    @property
    def max_cone_gap(self) -> float:
        return float(self.cone_gaps.max()) if self.cone_gaps.size else 0.0


def _row_violations(M, x, rhs, kind, tol):
    ax = M @ x
    res = ax - rhs
    bad = np.abs(res) if kind == "eq" else np.maximum(res, 0.0)
    Mabs = abs(M)
    scale = np.maximum(1.0, np.maximum(np.abs(rhs), Mabs @ np.abs(x)))
    return bad / scale > tol, bad


def extract_solution(prog: ConicProgram, x, report=None, tol: float = 1e-6) -> SopfSolution:
    """Map a solver point onto named arrays after checking bounds and rows."""
    if x is None:
        raise ExtractionError("no solver point to extract")
    x = np.asarray(x, float)
    if x.shape != (prog.n_vars,):
        raise ExtractionError(f"point has {x.size} entries, program has {prog.n_vars} columns")
    lo = prog.lb - x
    hi = x - prog.ub
    viol = np.maximum(lo, hi) > tol * np.maximum(1.0, np.abs(x))
    if np.any(viol):
        j = int(np.argmax(viol))
        name, idx = prog.describe_var(j)
        raise ExtractionError(f"bound violated on {name}{list(idx)}: value {x[j]!r}")
    for kind, M, rhs in (("eq", prog.A_eq, prog.b_eq), ("le", prog.A_le, prog.b_le)):
        flag, bad = _row_violations(M, x, rhs, kind, tol)
        if np.any(flag):
            r = int(np.argmax(flag))
            name, idx = prog.describe_row(kind, r)
            raise ExtractionError(f"row {name}{list(idx)} violated by {bad[r]:.3g}")
    binary = np.flatnonzero(prog.binary)
    if binary.size and np.any(np.abs(x[binary] - np.round(x[binary])) > 1e-5):
        j = binary[int(np.argmax(np.abs(x[binary] - np.round(x[binary]))))]
        name, idx = prog.describe_var(int(j))
        raise ExtractionError(f"binary {name}{list(idx)} is fractional: {x[j]!r}")

    x = np.clip(x, prog.lb, prog.ub)  # drop sub-tolerance bound violations
    get = lambda nm: x[prog.columns(nm)]  # noqa: E731
    V2, I2, P, Q = get("V2"), get("I2"), get("P"), get("Q")
    meta = prog.meta
    to = np.array([meta["node_ids"].index(e[1]) for e in meta["branch_ends"]], dtype=np.int64)
    vi = V2[to] * I2
    gaps = (vi - P**2 - Q**2) / np.maximum(1.0, vi) if vi.size else vi
    pi = np.asarray(meta["probabilities"])
    dt, s_kw = meta["delta_t"], meta["s_base_kw"]
    Zv, pv = get("Z"), get("p")
    flex = float(np.sum(Zv * pi[None, :]))
    cp = prog.c[prog.columns("p")]
    revenue = -float(np.sum(cp * pv))
    loss = 0.0
    if meta.get("loss_price", 0.0) > 0:
        loss = float(prog.c[prog.columns("I2")].ravel() @ I2.ravel())
    status = "optimal"
    bound_gap = 0.0
    if report is not None:
        status = {"gap_limit": "gap-limit", "optimal_inaccurate": "optimal"}.get(report.status, report.status)
        bound_gap = float(getattr(report, "bound_gap", 0.0))
    return SopfSolution(
        status=status, objective=prog.objective(x),
        objective_terms=dict(flexibility_cost=flex, reserve_revenue=revenue, loss_cost=loss,
                             planning_objective=flex - revenue),
        p=pv, rho=get("rho"), x=get("x"), phi=get("phi"), Phi=get("Phi"), Z=Zv,
        V2=V2, I2=I2, P=P, Q=Q, cone_gaps=gaps, bound_gap=bound_gap, probabilities=pi,
        meta=dict(meta, s_base_kw=s_kw), report=report)


@dataclass
class ExactnessReport:
    tol: float
    max_gap: float
    flagged: list  # (branch_index, period, scenario, gap)
    upper_voltage_binding: list  # (node_index, period, scenario)

    @property
    def ok(self) -> bool:
        return not self.flagged and not self.upper_voltage_binding


def check_exactness(sol: SopfSolution, tol: float = 1e-6, v_max: float | None = None,
                    v_tol: float = 1e-7) -> ExactnessReport:
    """Flag cones with a gap above ``tol`` and upper voltage bounds that are active."""
    g = sol.cone_gaps
    flagged = [(int(i), int(t), int(w), float(g[i, t, w])) for i, t, w in np.argwhere(g > tol)]
    vmax = v_max if v_max is not None else sol.meta.get("v_bounds", (0, np.inf))[1]
    binding = []
    if np.isfinite(vmax):
        hit = sol.V2 >= vmax**2 - v_tol
        # the substation voltage is fixed, not a bound
        subs = _substation_index(sol.meta)
        if subs is not None:
            hit[subs] = False
        binding = [tuple(int(v) for v in idx) for idx in np.argwhere(hit)]
    return ExactnessReport(tol, sol.max_cone_gap, flagged, binding)


def _substation_index(meta) -> int | None:
    children = {e[1] for e in meta["branch_ends"]}
    roots = [k for k, n in enumerate(meta["node_ids"]) if n not in children]
    return roots[0] if len(roots) == 1 else None


def _scenario_index(prog: ConicProgram):
    """Per scenario: its columns, eq rows, le rows and cones (scenario is always the last axis)."""
    W = int(prog.meta["scenarios"])

    def split(blocks):
        per = [[] for _ in range(W)]
        for blk in blocks:
            if not blk.dims or blk.dims[-1] != "scenario":
                continue
            idx = np.arange(blk.start, blk.start + blk.size).reshape(-1, W)
            for w in range(W):
                per[w].append(idx[:, w])
        return [np.concatenate(v) if v else np.zeros(0, dtype=np.int64) for v in per]

    cones = prog.cone_columns()
    return split(prog.var_blocks), split(prog.eq_blocks), split(prog.le_blocks), \
        [cones[w::W] for w in range(W)]


def _scenario_program(prog: ConicProgram, x, cols, eq, le, cones, fixed_first, w) -> ConicProgram:
    """Second-stage program of one scenario with first-stage columns held at ``x``."""
    local = -np.ones(prog.n_vars, dtype=np.int64)
    local[cols] = np.arange(cols.size)
    lb, ub = prog.lb[cols].copy(), prog.ub[cols].copy()
    binary = prog.binary[cols]
    lb[binary] = ub[binary] = np.round(x[cols][binary])
    A_eq, A_le = prog.A_eq[eq], prog.A_le[le]
    pi = float(prog.meta["probabilities"][w])
    return ConicProgram(
        lb=lb, ub=ub, binary=np.zeros(cols.size, bool), c=prog.c[cols] / pi, c0=0.0,
        A_eq=A_eq[:, cols], b_eq=prog.b_eq[eq] - A_eq[:, fixed_first] @ x[fixed_first],
        A_le=A_le[:, cols], b_le=prog.b_le[le] - A_le[:, fixed_first] @ x[fixed_first],
        var_blocks=[Block("second_stage", 0, (cols.size,))], eq_blocks=[Block("eq", 0, (eq.size,))],
        le_blocks=[Block("le", 0, (le.size,))],
        cones=[ConeBlock("cones", (len(cones),), local[cones])] if len(cones) else [], meta={})


def refine_second_stage(prog: ConicProgram, x, solver_options=None, gap_tol: float = 1e-10):
    """Re-solve every scenario on its own with the reserve and the segment choice held fixed.

    With the first stage fixed the scenarios decouple, and each small program
    reaches a much tighter duality gap than the joint one; that is what pins
    the rotated cones to their boundary.  A scenario keeps its joint-solve
    values when its re-solve fails or does not improve it.  Returns the new
    point and the number of scenarios that were replaced.
    """
    from .conic import SolverOptions, solve_socp

    opts = solver_options or SolverOptions()
    opts = replace(opts, gap_tol=min(opts.gap_tol, gap_tol))
    cols, eqs, les, cones = _scenario_index(prog)
    in_stage = np.zeros(prog.n_vars, bool)
    for c in cols:
        in_stage[c] = True
    first = np.flatnonzero(~in_stage)
    x = np.asarray(x, float).copy()
    replaced = 0
    for w in range(len(cols)):
        sub = _scenario_program(prog, x, cols[w], eqs[w], les[w], cones[w], first, w)
        xs, rep = solve_socp(sub, opts)
        if xs is None or not rep.ok:
            log.warning("scenario %d: second-stage re-solve %s; keeping the joint solution", w, rep.status)
            continue
        old = x[cols[w]]
        scale = max(1.0, abs(sub.objective(old)))
        if sub.objective(xs) > sub.objective(old) + 1e-7 * scale:
            log.warning("scenario %d: re-solve did not improve the objective; keeping the joint solution", w)
            continue
        x[cols[w]] = xs
        replaced += 1
    return x, replaced


def solve_sopf(prog: ConicProgram, solver_options=None, refine: bool = True) -> SopfSolution:
    """Solve with branch-and-bound (or its heuristic) and extract the result.

    With ``refine`` (the default) the second stage is re-solved scenario by
    scenario, see :func:`refine_second_stage`.
    """
    from .conic import SolverError, solve_misocp

    x, rep = solve_misocp(prog, solver_options)
    if x is None:
        raise SolverError(rep)
    if refine and prog.meta.get("scenarios", 1) > 1 and prog.cones:
        x, replaced = refine_second_stage(prog, x, solver_options)
        obj = prog.objective(x)
        rep.primal_objective = obj
        if np.isfinite(rep.best_bound):
            rep.bound_gap = max(0.0, obj - rep.best_bound)
        rep.message = (rep.message + "; " if rep.message else "") + f"second stage refined in {replaced} scenarios"
    return extract_solution(prog, x, rep)


def with_pool_caps(pools, caps_kw) -> list[ChargingPoolSpec]:
    """Pools with ``p_max`` replaced by ``caps_kw[s]`` (kW per period)."""
    return [pl.with_p_max(np.asarray(c, float)) for pl, c in zip(pools, caps_kw)]


__all__ = [
    "BuildOptions", "ExactnessReport", "ExtractionError", "ModelError", "SopfSolution",
    "base_case_options", "base_case_program", "build_sopf", "check_exactness", "count_columns",
    "extract_solution", "refine_second_stage", "solve_sopf", "with_pool_caps",
]
