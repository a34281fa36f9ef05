"""Pipeline stages behind the command line: base case, plan, validation,
payments and the figure report.  Every stage writes plain CSV/JSON files
into the output directory; nothing written depends on wall-clock time."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .flexarea import FlexibilityArea, flexibility_areas
from .network import NetworkModel, load_network
from .operation import operate_within_areas
from .pools import load_pools
from .scenarios import generate_scenarios
from .sopf import BuildOptions, SopfSolution, base_case_program, build_sopf, check_exactness, solve_sopf
from .validate import mc_validate, nodal_loads, power_flow

log = logging.getLogger(__name__)

_VOLATILE = ("solve_time",)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _report_dict(rep) -> dict:
    d = rep.to_dict()
    for k in _VOLATILE:
        d.pop(k, None)
    return d


@dataclass
class Inputs:
    net: NetworkModel
    pools: list
    hashes: dict


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_inputs(cfg: RunConfig) -> Inputs:
    net = load_network(cfg.network_path)
    pools = load_pools(cfg.pools_path, net.periods)
    for p in pools:
        p.check_against(net)
    return Inputs(net, pools, {"network": sha256_file(cfg.network_path), "pools": sha256_file(cfg.pools_path)})


def _sweep(net: NetworkModel, pools, draws_kw):
    """Power flow on pool draws (S, T, W); returns V2 (B, T, W), I2 (L, T, W)."""
    S, T, W = draws_kw.shape
    p, q = nodal_loads(net, [pl.node for pl in pools], draws_kw)
    st = power_flow(net, p.reshape(net.n_nodes, -1), q.reshape(net.n_nodes, -1))
    return st.V2.reshape(net.n_nodes, T, W), st.I2.reshape(net.n_branches, T, W)


def _substation_branch(net: NetworkModel) -> int:
    return int(np.flatnonzero(net.from_idx == net.root)[0])


# ---------------------------------------------------------------------------
# stages


def run_base(cfg: RunConfig, inp: Inputs, out: Path) -> dict:
    net, pools = inp.net, inp.pools
    sc = cfg.doc["scenarios"]
    scen = generate_scenarios(pools, sc["count"], sc["seed"], net.periods, net.delta_t)
    sol = solve_sopf(base_case_program(net, pools, scen), cfg.solver_options())
    # limits are widened in the base program, so voltages and currents come
    # from the power-flow sweep on the scheduled draws
    V2, I2 = _sweep(net, pools, sol.draws)
    min_v = np.sqrt(V2.min(axis=0))  # (T, W)
    k = _substation_branch(net)
    sub = np.sqrt(I2[k]) / net.i_max[k]
    load_all = (np.sqrt(I2) / net.i_max[:, None, None]).max(axis=0)
    T = net.periods
    rows = [(t, min_v[t].mean(), min_v[t].min(), min_v[t].max(), sub[t].mean(), sub[t].min(), sub[t].max(),
             float(np.mean(min_v[t] < net.v_min)), float(np.mean(load_all[t] > 1.0))) for t in range(T)]
    (out / "base_trace.csv").write_text(_csv(
        ["period", "min_v_mean", "min_v_min", "min_v_max", "sub_loading_mean", "sub_loading_min",
         "sub_loading_max", "undervoltage_share", "overcurrent_share"], rows))
    under = [t for t in range(T) if np.any(min_v[t] < net.v_min)]
    over = [t for t in range(T) if np.any(load_all[t] > 1.0)]
    summary = {
        "scenarios": sc["count"], "seed": sc["seed"], "status": sol.status,
        "lowest_voltage": float(min_v.min()), "highest_substation_loading": float(sub.max()),
        "undervoltage_periods": under, "overcurrent_periods": over,
        "solver": _report_dict(sol.report),
    }
    (out / "base.json").write_text(_dumps(summary))
    return summary


def solve_plan(cfg: RunConfig, inp: Inputs) -> SopfSolution:
    net, pools = inp.net, inp.pools
    sc = cfg.doc["scenarios"]
    scen = generate_scenarios(pools, sc["count"], sc["seed"], net.periods, net.delta_t)
    prog = build_sopf(net, pools, scen, BuildOptions(loss_price=cfg.doc["build"]["loss_price"]))
    return solve_sopf(prog, cfg.solver_options())


def run_plan(cfg: RunConfig, inp: Inputs, out: Path, sol: SopfSolution | None = None):
    net, pools = inp.net, inp.pools
    sol = sol or solve_plan(cfg, inp)
    ex = check_exactness(sol)
    area = flexibility_areas(sol, cfg.beta)
    V2, I2 = _sweep(net, pools, sol.draws)
    tol = 1e-6
    v_low = float(np.sqrt(sol.V2.min()))
    loading = float((np.sqrt(sol.I2.max(axis=(1, 2))) / net.i_max).max())
    pi = sol.probabilities
    summary = {
        "status": sol.status,
        "objective": sol.objective,
        "objective_terms": sol.objective_terms,
        "expected_flexibility_cost": float(np.sum(sol.Z * pi[None, :])),
        "bound_gap": sol.bound_gap,
        "solver": _report_dict(sol.report),
        "exactness": {"tol": ex.tol, "max_gap": ex.max_gap, "flagged": len(ex.flagged),
                      "upper_voltage_binding": len(ex.upper_voltage_binding)},
        "sweep_agreement": {"V2": float(np.abs(V2 - sol.V2).max()), "I2": float(np.abs(I2 - sol.I2).max())},
        "limits": {"lowest_voltage": v_low, "highest_loading": loading,
                   "met": bool(v_low >= net.v_min - tol and loading <= 1.0 + tol)},
        "scenarios": sol.meta["scenarios"],
    }
    (out / "plan.json").write_text(_dumps(summary))
    S, T, W = sol.rho.shape
    ids = sol.pool_ids
    (out / "reserve.csv").write_text(_csv(
        ["pool", "period", "reserve_kw"], [(ids[s], t, sol.p[s, t]) for s in range(S) for t in range(T)]))
    (out / "mismatch.csv").write_text(_csv(
        ["pool", "period", "scenario", "mismatch_kw", "probability"],
        [(ids[s], t, w, sol.rho[s, t, w], pi[w]) for s in range(S) for t in range(T) for w in range(W)]))
    (out / "areas.csv").write_text(area.to_csv())
    (out / "areas.json").write_text(area.to_json() + "\n")
    return sol, area, summary


def _beta_levels(cfg: RunConfig) -> list:
    return sorted({float(b) for b in cfg.doc["validation"]["betas"]})


def run_validate(cfg: RunConfig, inp: Inputs, out: Path, sol: SopfSolution, area: FlexibilityArea) -> dict:
    v = cfg.doc["validation"]
    main = mc_validate(inp.net, inp.pools, area, v["sims"], v["seed"])
    (out / "validation.json").write_text(main.to_json() + "\n")
    (out / "validation_traces.csv").write_text(main.traces_csv())
    (out / "validation_ecdf.csv").write_text(main.ecdf_csv())
    sweep_rows, ecdf_rows = [], []
    for beta in _beta_levels(cfg):
        rep = mc_validate(inp.net, inp.pools, flexibility_areas(sol, beta), v["sims"], v["seed"])
        sweep_rows.append((beta, rep.violation_frequency, rep.voltage_violation_frequency,
                           rep.current_violation_frequency, int(rep.failed.sum())))
        mv, ml = rep.all_period_extremes()
        ecdf_rows += [(beta, k, a, b) for k, (a, b) in enumerate(zip(mv, ml))]
    (out / "validation_sweep.csv").write_text(_csv(
        ["beta", "violation_frequency", "voltage_violation_frequency", "current_violation_frequency",
         "failed_sims"], sweep_rows))
    (out / "validation_sweep_extremes.csv").write_text(_csv(
        ["beta", "sim", "lowest_voltage", "highest_loading"], ecdf_rows))
    return {"violation_frequency": main.violation_frequency,
            "sweep": {r[0]: r[1] for r in sweep_rows}}


def run_payment(cfg: RunConfig, inp: Inputs, out: Path, sol: SopfSolution, area: FlexibilityArea) -> dict:
    pc = cfg.doc["payment"]
    res = operate_within_areas(inp.net, inp.pools, area, pc["count"], pc["seed"], cfg.solver_options(),
                               cfg.doc["build"]["loss_price"])
    rep = res.payments
    (out / "payments.json").write_text(rep.to_json() + "\n")
    (out / "payments.csv").write_text(_csv(
        ["scenario", "revenue", "cost", "total"],
        [(w, rep.revenue[w], rep.cost[w], rep.total[w]) for w in range(rep.total.size)]))
    return rep.summary()


def _read_csv(path: Path) -> dict:
    with path.open() as fh:
        rows = list(csv.reader(fh))
    cols = rows[0]
    data = {c: [r[i] for r in rows[1:]] for i, c in enumerate(cols)}
    out = {}
    for c, vals in data.items():
        try:
            out[c] = np.array([float(v) for v in vals])
        except ValueError:
            out[c] = vals
    return out


def run_report(out: Path, v_min: float) -> list:
    """Render every figure whose source files exist in ``out``."""
    from . import plotting

    made = []
    if (out / "base_trace.csv").is_file():
        made.append(plotting.plot_base_case(out / "base_case.png", _read_csv(out / "base_trace.csv"), v_min))
    if (out / "areas.json").is_file():
        area = FlexibilityArea.from_dict(json.loads((out / "areas.json").read_text()))
        made.append(plotting.plot_areas(out / "areas.png", area))
    if (out / "validation_traces.csv").is_file() and (out / "validation_sweep_extremes.csv").is_file():
        ext = _read_csv(out / "validation_sweep_extremes.csv")
        ecdfs = {float(b): ext["lowest_voltage"][ext["beta"] == b] for b in np.unique(ext["beta"])}
        made.append(plotting.plot_validation(out / "validation.png", _read_csv(out / "validation_traces.csv"),
                                             ecdfs, v_min))
    if (out / "payments.csv").is_file():
        pay = json.loads((out / "payments.json").read_text())
        beta = np.asarray(pay.get("beta", [[np.nan]]), float)
        key = float(beta.flat[0]) if beta.size and np.all(beta == beta.flat[0]) else float("nan")
        made.append(plotting.plot_payments(out / "payments.png", {key: _read_csv(out / "payments.csv")["total"]}))
    return [p.name for p in made]


def write_manifest(cfg: RunConfig, inp: Inputs | None, out: Path, stages: list) -> dict:
    import matplotlib
    import qdldl  # noqa: F401
    import scipy

    doc = json.loads(cfg.to_json())
    doc["paths"] = {k: (Path(v).name if v else v) for k, v in doc["paths"].items() if k != "out"}
    files = {}
    for p in sorted(out.iterdir()):
        if p.is_file() and p.name != "manifest.json":
            files[p.name] = {"sha256": sha256_file(p), "bytes": p.stat().st_size}
    man = {
        "tool": "evflex", "version": __version__, "stages": stages, "config": doc,
        "inputs": inp.hashes if inp else {},
        "seeds": {"scenarios": cfg.doc["scenarios"]["seed"], "validation": cfg.doc["validation"]["seed"],
                  "payment": cfg.doc["payment"]["seed"]},
        "versions": {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
                     "matplotlib": matplotlib.__version__, "qdldl": _dist_version("qdldl")},
        "files": files,
    }
    (out / "manifest.json").write_text(_dumps(man))
    return man


def _dist_version(name: str) -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version(name)
    except PackageNotFoundError:
        return "unknown"
