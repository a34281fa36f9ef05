"""Power-flow sweep, Monte-Carlo validation of flexibility areas and pool payments."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .flexarea import FlexibilityArea
from .network import NetworkModel
from .scenarios import uniforms
from .utility import UtilityError, evaluate_utility

log = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    pass


@dataclass(eq=False)
class PowerFlowState:
    """Branch-flow state for a batch of ``K`` load cases (columns)."""

    V2: np.ndarray  # (B, K)
    I2: np.ndarray  # (L, K)
    P: np.ndarray  # (L, K) receiving-end flows
    Q: np.ndarray
    residual: float
    iterations: int
    converged: np.ndarray  # (K,) bool

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.V2, 0.0))

    @property
    def i(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.I2, 0.0))


def power_flow(net: NetworkModel, p_load, q_load, tol: float = 1e-12, max_iter: int = 100,
               strict: bool = True) -> PowerFlowState:
    """Backward/forward sweep on nodal loads ``p_load``, ``q_load`` (pu, shape (B,) or (B, K)).

    Limits are not enforced.  With ``strict`` a non-converged or collapsed
    column raises :class:`PowerFlowError`; otherwise it is flagged in
    ``converged`` and its values are NaN.
    """
    pl = np.asarray(p_load, float)
    ql = np.asarray(q_load, float)
    squeeze = pl.ndim == 1
    pl, ql = np.atleast_2d(pl.T).T, np.atleast_2d(ql.T).T
    if pl.shape[0] != net.n_nodes or pl.shape != ql.shape:
        raise ValueError(f"loads must have {net.n_nodes} rows and matching shapes")
    if not (np.all(np.isfinite(pl)) and np.all(np.isfinite(ql))):
        raise ValueError("non-finite injections")
    B, K = pl.shape
    L = net.n_branches
    fr, to = net.from_idx, net.to_idx
    r, x = net.r, net.x
    z2 = r**2 + x**2
    vs2 = net.v_substation**2
    # branches are breadth-first, so a parent branch always precedes its children
    V2 = np.full((B, K), vs2)
    I2 = np.zeros((L, K))
    P = np.zeros((L, K))
    Q = np.zeros((L, K))
    alive = np.ones(K, dtype=bool)
    delta = np.full(K, np.inf)
    it = 0
    for it in range(1, max_iter + 1):
        Pn, Qn = pl.copy(), ql.copy()
        for k in range(L - 1, -1, -1):
            j, i = to[k], fr[k]
            P[k], Q[k] = Pn[j], Qn[j]
            I2[k] = (P[k] ** 2 + Q[k] ** 2) / V2[j]
            Pn[i] += P[k] + r[k] * I2[k]
            Qn[i] += Q[k] + x[k] * I2[k]
        Vn = np.empty_like(V2)
        Vn[net.root] = vs2
        for k in range(L):
            Vn[to[k]] = Vn[fr[k]] - 2.0 * (r[k] * P[k] + x[k] * Q[k]) - z2[k] * I2[k]
        with np.errstate(invalid="ignore"):
            collapsed = np.any(~(Vn > 0), axis=0) & alive
        if np.any(collapsed):
            if strict:
                raise PowerFlowError(f"voltage collapse in {int(collapsed.sum())} load case(s)")
            alive &= ~collapsed
            Vn[:, collapsed] = np.nan
        delta = np.where(alive, np.max(np.abs(Vn - V2), axis=0), np.inf)
        V2 = np.where(alive, Vn, V2)
        if np.all(delta[alive] <= tol):
            break
    conv = alive & (delta <= tol)
    if strict and not np.all(conv):
        raise PowerFlowError(f"sweep did not converge in {max_iter} iterations")
    # recompute currents against the final voltages so the cone relation is exact
    with np.errstate(invalid="ignore", divide="ignore"):
        I2 = (P**2 + Q**2) / V2[to]
    bad = ~conv
    for arr in (V2, I2, P, Q):
        arr[:, bad] = np.nan
    res = float(np.max(delta[conv])) if np.any(conv) else np.inf
    if squeeze:
        return PowerFlowState(V2[:, 0], I2[:, 0], P[:, 0], Q[:, 0], res, it, conv)
    return PowerFlowState(V2, I2, P, Q, res, it, conv)


def branch_flow_residuals(net: NetworkModel, state: PowerFlowState, p_load, q_load) -> dict:
    """Max absolute residuals of the nodal balances, voltage drop and current relation."""
    V2, I2, P, Q = (np.atleast_2d(a.T).T for a in (state.V2, state.I2, state.P, state.Q))
    pl, ql = np.atleast_2d(np.asarray(p_load, float).T).T, np.atleast_2d(np.asarray(q_load, float).T).T
    fr, to = net.from_idx, net.to_idx
    inflow_p = np.zeros_like(pl)
    inflow_q = np.zeros_like(ql)
    np.add.at(inflow_p, to, P)
    np.add.at(inflow_q, to, Q)
    np.add.at(inflow_p, fr, -(P + net.r[:, None] * I2))
    np.add.at(inflow_q, fr, -(Q + net.x[:, None] * I2))
    nonroot = np.arange(net.n_nodes) != net.root
    z2 = (net.r**2 + net.x**2)[:, None]
    drop = V2[to] - V2[fr] + 2 * (net.r[:, None] * P + net.x[:, None] * Q) + z2 * I2
    return {
        "active_balance": float(np.max(np.abs(inflow_p - pl)[nonroot], initial=0.0)),
        "reactive_balance": float(np.max(np.abs(inflow_q - ql)[nonroot], initial=0.0)),
        "voltage_drop": float(np.max(np.abs(drop), initial=0.0)),
        "current": float(np.max(np.abs(V2[to] * I2 - P**2 - Q**2), initial=0.0)),
    }


def nodal_loads(net: NetworkModel, pool_nodes, draws_kw) -> tuple[np.ndarray, np.ndarray]:
    """Base demand plus pool draws (kW, shape (S, T, ...)) as pu loads (B, T, ...)."""
    draws = np.asarray(draws_kw, float)
    extra = draws.shape[2:]
    p = np.broadcast_to(net.p_demand.reshape(net.n_nodes, net.periods, *([1] * len(extra))),
                        (net.n_nodes, net.periods, *extra)).copy()
    q = np.broadcast_to(net.q_demand.reshape(net.n_nodes, net.periods, *([1] * len(extra))),
                        (net.n_nodes, net.periods, *extra)).copy()
    idx = np.array([net.index(n) for n in pool_nodes], dtype=np.int64)
    if idx.size:
        np.add.at(p, idx, draws / net.s_base_kw)
    return p, q


# ---------------------------------------------------------------------------
# Monte-Carlo validation


@dataclass(eq=False)
class ValidationReport:
    sims: int
    seed: int
    beta: np.ndarray  # (S, T)
    v_min_limit: float
    min_v: np.ndarray  # (sims, T) lowest nodal voltage per period, pu
    max_i: np.ndarray  # (sims, T) highest branch current per period, pu
    max_loading: np.ndarray  # (sims, T) highest current / ampacity
    failed: np.ndarray  # (sims,) power flow did not converge
    tol: float = 1e-6
    meta: dict = field(default_factory=dict)

    @property
    def ok_sims(self) -> np.ndarray:
        return ~self.failed

    @property
    def voltage_violation(self) -> np.ndarray:
        """(sims, T) period-level undervoltage flags."""
        return self.min_v < self.v_min_limit - self.tol

    @property
    def current_violation(self) -> np.ndarray:
        return self.max_loading > 1.0 + self.tol

    def _freq(self, flags) -> float:
        ok = self.ok_sims
        return float(flags[ok].mean()) if ok.any() else float("nan")

    @property
    def violation_frequency(self) -> float:
        """Fraction of simulations with any limit breach in any period."""
        return self._freq(np.any(self.voltage_violation | self.current_violation, axis=1))

    @property
    def voltage_violation_frequency(self) -> float:
        return self._freq(np.any(self.voltage_violation, axis=1))

    @property
    def current_violation_frequency(self) -> float:
        return self._freq(np.any(self.current_violation, axis=1))

    def period_frequencies(self) -> dict:
        ok = self.ok_sims
        return {
            "voltage": self.voltage_violation[ok].mean(axis=0).tolist(),
            "current": self.current_violation[ok].mean(axis=0).tolist(),
            "any": (self.voltage_violation | self.current_violation)[ok].mean(axis=0).tolist(),
        }

    def period_stats(self) -> dict:
        ok = self.ok_sims
        mv, mi = self.min_v[ok], self.max_i[ok]
        return {
            "min_v_mean": mv.mean(axis=0).tolist(), "min_v_min": mv.min(axis=0).tolist(),
            "min_v_max": mv.max(axis=0).tolist(), "max_i_mean": mi.mean(axis=0).tolist(),
            "max_i_min": mi.min(axis=0).tolist(), "max_i_max": mi.max(axis=0).tolist(),
        }

    def all_period_extremes(self) -> tuple[np.ndarray, np.ndarray]:
        """Per simulation: lowest voltage and highest loading over the whole horizon."""
        ok = self.ok_sims
        return self.min_v[ok].min(axis=1), self.max_loading[ok].max(axis=1)

    def to_dict(self) -> dict:
        return {
            "sims": self.sims, "seed": self.seed, "failed_sims": int(self.failed.sum()),
            "beta": self.beta.tolist(), "tolerance": self.tol,
            "violation_frequency": self.violation_frequency,
            "voltage_violation_frequency": self.voltage_violation_frequency,
            "current_violation_frequency": self.current_violation_frequency,
            "period_frequencies": self.period_frequencies(), "period_stats": self.period_stats(),
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def traces_csv(self) -> str:
        st, fq = self.period_stats(), self.period_frequencies()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = list(st) + ["violation_voltage", "violation_current", "violation_any"]
        w.writerow(["period"] + cols)
        for t in range(self.min_v.shape[1]):
            w.writerow([t] + [repr(float(st[k][t])) for k in st]
                       + [repr(float(fq[k][t])) for k in ("voltage", "current", "any")])
        return buf.getvalue()

    def ecdf_csv(self) -> str:
        mv, ml = self.all_period_extremes()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["quantity", "value", "cdf"])
        for name, vals in (("min_v", mv), ("max_loading", ml)):
            v = np.sort(vals)
            F = np.arange(1, v.size + 1) / v.size
            for a, b in zip(v, F):
                w.writerow([name, repr(float(a)), repr(float(b))])
        return buf.getvalue()


def draw_consumption(area: FlexibilityArea, sims: int, seed: int) -> np.ndarray:
    """Uniform draws in ``[lower, upper]`` (kW), shape (sims, S, T).

    The unit draws depend only on (seed, pool, period, sim), so areas that
    differ only in their upper bound reuse the same random numbers.
    """
    S, T = area.lower_kw.shape
    u = np.empty((sims, S, T))
    for s, pid in enumerate(area.pool_ids):
        for t in range(T):
            u[:, s, t] = uniforms(seed, f"mc:{pid}:{t}", "consumption", sims)
    return area.lower_kw[None] + u * (area.upper_kw - area.lower_kw)[None]


def mc_validate(net: NetworkModel, pools, area: FlexibilityArea, sims: int, seed: int,
                tol: float = 1e-6, chunk: int = 500) -> ValidationReport:
    if sims < 1:
        raise ValueError("sims must be positive")
    ids = [p.pool_id for p in pools]
    if list(area.pool_ids) != ids or area.periods != net.periods:
        raise ValueError("areas must cover every pool and period of the network")
    draws = draw_consumption(area, sims, seed)  # (sims, S, T)
    T = net.periods
    min_v = np.full((sims, T), np.nan)
    max_i = np.full((sims, T), np.nan)
    load = np.full((sims, T), np.nan)
    failed = np.zeros(sims, dtype=bool)
    imax = net.i_max[:, None]
    for lo in range(0, sims, chunk):
        hi = min(sims, lo + chunk)
        d = np.moveaxis(draws[lo:hi], 0, -1)  # (S, T, n)
        p, q = nodal_loads(net, [pl.node for pl in pools], d)
        st = power_flow(net, p.reshape(net.n_nodes, -1), q.reshape(net.n_nodes, -1), strict=False)
        n = hi - lo
        conv = st.converged.reshape(T, n)
        failed[lo:hi] = ~np.all(conv, axis=0)
        with np.errstate(invalid="ignore"):
            min_v[lo:hi] = np.sqrt(np.min(st.V2, axis=0)).reshape(T, n).T
            i = st.i
            max_i[lo:hi] = np.max(i, axis=0).reshape(T, n).T
            load[lo:hi] = np.max(i / imax, axis=0).reshape(T, n).T
    if failed.any():
        log.warning("%d of %d simulations failed to converge and were skipped", failed.sum(), sims)
    return ValidationReport(sims, seed, area.beta.copy(), net.v_min, min_v, max_i, load, failed, tol)


# ---------------------------------------------------------------------------
# payments


@dataclass(eq=False)
class PaymentReport:
    revenue: np.ndarray  # (W,) energy delivered times price
    cost: np.ndarray  # (W,) utility cost of energy not served
    total: np.ndarray  # (W,) revenue - cost
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        q = np.percentile(self.total, [5, 25, 50, 75, 95])
        return {"mean": float(self.total.mean()), "p05": float(q[0]), "q25": float(q[1]),
                "median": float(q[2]), "q75": float(q[3]), "p95": float(q[4]), "count": int(self.total.size)}

    def to_dict(self) -> dict:
        return {"summary": self.summary(), "revenue": self.revenue.tolist(), "cost": self.cost.tolist(),
                "total": self.total.tolist(), **self.meta}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def payment_analysis(pools, task_keys, x_kw, Phi_kwh, delta_t: float = 1.0, domain_tol: float = 1e-6) -> PaymentReport:
    """Per-scenario pool payments.

    ``x_kw`` is (N, T, W) delivered power per task, ``Phi_kwh`` (S, W) energy
    not served per pool; tasks map to pools through ``task_keys``.
    """
    x_kw = np.asarray(x_kw, float)
    Phi = np.asarray(Phi_kwh, float)
    ids = {p.pool_id: k for k, p in enumerate(pools)}
    owner = np.array([ids[k[0]] for k in task_keys], dtype=np.int64)
    price = np.stack([p.energy_price for p in pools]) if pools else np.zeros((0, x_kw.shape[1]))
    revenue = np.einsum("ntw,nt->w", x_kw, price[owner]) * delta_t if owner.size else np.zeros(Phi.shape[1])
    cost = np.zeros(Phi.shape[1])
    for s, p in enumerate(pools):
        top = p.utility.domain_max
        for w in range(Phi.shape[1]):
            v = Phi[s, w]
            if v < -domain_tol or v > top + domain_tol * max(1.0, top):
                raise UtilityError(f"energy not served {v} outside the utility domain of pool {p.pool_id}")
            v = min(max(v, 0.0), top)
            cost[w] += evaluate_utility(p.utility, v if v > domain_tol else 0.0)
    return PaymentReport(revenue, cost, revenue - cost)
