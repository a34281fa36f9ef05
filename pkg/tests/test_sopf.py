import numpy as np
import pytest

from conftest import simple_pool, small_instance, task
from evflex.conic import SolverOptions
from evflex.scenarios import generate_scenarios
from evflex.sopf import (BuildOptions, ExtractionError, ModelError, base_case_program, build_sopf,
                         check_exactness, count_columns, extract_solution, refine_second_stage, solve_sopf)
from evflex.utility import UtilityFunction, encoding_minimum
from evflex.validate import nodal_loads, power_flow

EXACT = SolverOptions(bb_rel_gap=1e-12, bb_abs_gap=1e-9)


@pytest.fixture(scope="module")
def solved():
    net, pools, scen = small_instance(0, 6)
    prog = build_sopf(net, pools, scen)
    return net, pools, scen, prog, solve_sopf(prog, EXACT)


@pytest.mark.parametrize("operational", [False, True])
def test_column_count_closed_form(operational):
    net, pools, scen = small_instance(3, 9, scenarios=3)
    prog = build_sopf(net, pools, scen, BuildOptions(operational=operational))
    assert prog.n_vars == count_columns(net, pools, scen, operational)


def test_horizon_mismatch_rejected():
    net, pools, _ = small_instance(0, 5)
    scen = generate_scenarios(pools, 2, 0, 4)
    with pytest.raises(ModelError):
        build_sopf(net, pools, scen)


def test_every_scenario_block_ends_in_scenario_axis(solved):
    *_, prog, _ = solved
    for blk in prog.var_blocks:
        if blk.name not in ("p",):
            assert blk.dims[-1] == "scenario", blk.name


def test_solution_is_exact_and_balanced(solved):
    net, pools, scen, prog, sol = solved
    assert sol.status == "optimal"
    ex = check_exactness(sol)
    assert ex.ok and ex.max_gap < 1e-8
    p, q = nodal_loads(net, [pl.node for pl in pools], sol.draws)
    st = power_flow(net, p.reshape(net.n_nodes, -1), q.reshape(net.n_nodes, -1))
    for k in ("V2", "I2", "P", "Q"):
        assert np.allclose(getattr(st, k).reshape(getattr(sol, k).shape), getattr(sol, k), atol=1e-8), k


def test_shortfall_priced_by_encoding(solved):
    _, pools, _, _, sol = solved
    for s, pl in enumerate(pools):
        for w in range(sol.Phi.shape[1]):
            phi = sol.Phi[s, w] if sol.Phi[s, w] > 1e-7 else 0.0  # solver noise around zero
            assert sol.Z[s, w] == pytest.approx(encoding_minimum(pl.utility, phi), abs=1e-6)


def test_task_energy_accounting(solved):
    *_, scen, _, sol = solved
    delivered = sol.x.sum(axis=1) * scen.delta_t  # (N, W)
    assert np.allclose(delivered + sol.phi, scen.energy, atol=1e-6)
    # no charging outside the plug-in window
    t = np.arange(scen.horizon)[None, :, None]
    outside = (t < scen.arrival[:, None, :]) | (t >= scen.departure[:, None, :])
    assert np.all(np.abs(sol.x[outside]) < 1e-6)


def test_objective_terms_add_up(solved):
    *_, sol = solved
    terms = sol.objective_terms
    assert terms["planning_objective"] == pytest.approx(terms["flexibility_cost"] - terms["reserve_revenue"])
    assert sol.objective == pytest.approx(terms["planning_objective"] + terms["loss_cost"], abs=1e-6)


def test_refinement_never_worsens(solved):
    *_, prog, _ = solved
    from evflex.conic import solve_misocp

    x, _ = solve_misocp(prog, EXACT)
    x2, replaced = refine_second_stage(prog, x)
    assert 0 <= replaced <= prog.meta["scenarios"]
    assert prog.objective(x2) <= prog.objective(x) + 1e-7 * max(1.0, abs(prog.objective(x)))
    # first-stage reserve untouched
    assert np.array_equal(x2[prog.columns("p")], x[prog.columns("p")])


def test_extraction_rejects_bad_points(solved):
    *_, prog, _ = solved
    with pytest.raises(ExtractionError):
        extract_solution(prog, None)
    with pytest.raises(ExtractionError):
        extract_solution(prog, np.zeros(prog.n_vars + 1))
    x = np.clip(np.zeros(prog.n_vars), prog.lb, prog.ub)
    x[prog.columns("p").ravel()[0]] = -5.0
    with pytest.raises(ExtractionError):
        extract_solution(prog, x)


def test_exactness_flags_gaps(solved):
    *_, sol = solved
    import copy

    bad = copy.copy(sol)
    bad.cone_gaps = sol.cone_gaps.copy()
    bad.cone_gaps[0, 1, 0] = 1e-3
    ex = check_exactness(bad)
    assert not ex.ok and ex.flagged[0][:3] == (0, 1, 0)


def test_convex_utilities_drop_binaries():
    net, _, _ = small_instance(1, 5)
    convex = UtilityFunction(np.array([0.0, 10.0, 40.0]), np.array([0.2, 0.6]), np.array([0.0, -4.0]))
    pools = [simple_pool("a", net.node_ids[2], 3, [task("a1", 0.5)], utility=convex)]
    scen = generate_scenarios(pools, 2, 0, 3)
    assert build_sopf(net, pools, scen).n_binary == 0
    assert build_sopf(net, pools, scen, BuildOptions(convex_shortcut=False)).n_binary == 2 * 2


def test_base_case_serves_everything():
    net, _, _ = small_instance(2, 7)
    pools = [simple_pool("a", net.node_ids[3], 3, [task("a1", 0.5), task("a2", 1.0)]),
             simple_pool("b", net.node_ids[-1], 3, [task("b1", 0.2, e_max=50.0)])]
    scen = generate_scenarios(pools, 3, 2, 3)
    sol = solve_sopf(base_case_program(net, pools, scen), EXACT)
    assert np.allclose(sol.Phi, 0.0, atol=1e-7)
    assert np.allclose(sol.p, 0.0)


def test_operational_mode_has_per_scenario_reserve():
    net, pools, scen = small_instance(4, 6)
    sol = solve_sopf(build_sopf(net, pools, scen, BuildOptions(operational=True)), EXACT)
    assert sol.p.shape == (2, 3, 2)
    assert np.all(sol.draws >= -1e-7)


def test_reserve_never_above_pool_cap(solved):
    _, pools, _, _, sol = solved
    cap = np.stack([pl.p_max for pl in pools])
    assert np.all(sol.draws <= cap[:, :, None] + 1e-6)


def _two_bus(periods=2, p_kw=50.0):
    from evflex.network import network_from_dict

    return network_from_dict({"nodes": ["1", "2"], "substation": "1", "periods": periods,
                              "branches": [{"from": "1", "to": "2", "r": 0.2, "x": 0.2, "i_max": 400.0}],
                              "demand_profiles": {"p": {"2": [p_kw] * periods}, "q": {"2": [0.0] * periods}}})


def test_two_bus_hand_count():
    net = _two_bus()
    u = UtilityFunction(np.array([0.0, 30.0]), np.array([0.5]), np.array([1.0]))  # kappa = 1
    pools = [simple_pool("a", "2", 2, [task("t", 0.0, rate=1.0)], utility=u)]
    scen = generate_scenarios(pools, 1, 0, 2)
    prog = build_sopf(net, pools, scen)
    S, T, W, N, K, L, B = 1, 2, 1, 1, 1, 1, 2
    first = S * T
    second = W * (S * T + N * T + N + S + (K + 1) + K + K + 1)  # rho, x, phi, Phi, lam_lo, lam_hi, y, Z
    network = W * T * (B + 3 * L)  # V2 per node; I2, P, Q per branch
    assert prog.n_vars == first + second + network
    assert len(prog.cone_columns()) == L * T * W
    # one shared reserve column per (pool, period)
    assert prog.columns("p").shape == (S, T)


def test_no_pools_zero_objective():
    from evflex.scenarios import ScenarioSet

    net = _two_bus()
    scen = ScenarioSet(0, 2, 1.0, (), np.zeros(0), np.array([0.5, 0.5]), np.zeros((0, 2), int),
                       np.zeros((0, 2), int), np.zeros((0, 2)))
    sol = solve_sopf(build_sopf(net, [], scen, BuildOptions(loss_price=0.0)))
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_base_case_charges_asap():
    net = _two_bus(periods=4, p_kw=10.0)
    pools = [simple_pool("a", "2", 4, [task("t", 1.0, rate=0.1, e_min=15.0, e_max=15.0, x_max=50.0)])]
    scen = generate_scenarios(pools, 1, 3, 4)
    sol = solve_sopf(base_case_program(net, pools, scen), EXACT)
    a = int(scen.arrival[0, 0])
    assert sol.x[0, a, 0] == pytest.approx(15.0, abs=1e-5)
    assert np.allclose(np.delete(sol.x[0, :, 0], a), 0.0, atol=1e-5)


def test_row_violation_names_row(solved):
    *_, prog, _ = solved
    from evflex.conic import solve_misocp

    x, _ = solve_misocp(prog, EXACT)
    x = x.copy()
    j = prog.columns("phi").ravel()[0]
    x[j] += 1e-3  # breaks the task energy row only
    with pytest.raises(ExtractionError, match="row"):
        extract_solution(prog, x)


def test_objective_reevaluates(solved):
    *_, sol = solved
    assert sol.objective == pytest.approx(sol.report.primal_objective, abs=1e-8)


def test_energy_conservation_tight(solved):
    *_, scen, _, sol = solved
    assert np.max(np.abs(sol.x.sum(axis=1) * scen.delta_t + sol.phi - scen.energy)) <= 1e-8


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_widening_limits_never_hurts(seed):
    net, pools, scen = small_instance(seed, 8)
    base = solve_sopf(build_sopf(net, pools, scen), EXACT).objective
    looser_v = solve_sopf(build_sopf(net, pools, scen, BuildOptions(v_bounds=(0.90, net.v_max))), EXACT).objective
    looser_i = solve_sopf(build_sopf(net, pools, scen, BuildOptions(current_scale=1.5)), EXACT).objective
    assert looser_v <= base + 1e-6 and looser_i <= base + 1e-6


def test_convex_shortcut_matches_exact_bnb():
    net, _, _ = small_instance(1, 5)
    convex = UtilityFunction(np.array([0.0, 10.0, 40.0]), np.array([0.2, 0.6]), np.array([0.0, -4.0]))
    pools = [simple_pool("a", net.node_ids[2], 3, [task("a1", 0.5, e_min=20.0, e_max=60.0)], utility=convex,
                         p_max=8.0)]
    scen = generate_scenarios(pools, 2, 0, 3)
    short = solve_sopf(build_sopf(net, pools, scen), EXACT)
    full = solve_sopf(build_sopf(net, pools, scen, BuildOptions(convex_shortcut=False)), EXACT)
    assert short.objective == pytest.approx(full.objective, abs=1e-6)


def test_two_bus_opf_closed_form():
    from evflex.network import network_from_dict
    from evflex.scenarios import ScenarioSet

    P, Q, r = 0.1, 0.05, 0.05
    net = network_from_dict({"nodes": ["1", "2"], "substation": "1", "periods": 1,
                             "units": {"r": "pu", "x": "pu", "i_max": "pu"},
                             "branches": [{"from": "1", "to": "2", "r": r, "x": r, "i_max": 2.0}],
                             "demand_profiles": {"p": {"2": [1e3 * P]}, "q": {"2": [1e3 * Q]}}})
    scen = ScenarioSet(0, 1, 1.0, (), np.zeros(0), np.array([1.0]), np.zeros((0, 1), int),
                       np.zeros((0, 1), int), np.zeros((0, 1)))
    sol = solve_sopf(build_sopf(net, [], scen), EXACT)
    b = 1.0 - 2 * (r * P + r * Q)
    v2 = (b + np.sqrt(b**2 - 4 * 2 * r**2 * (P**2 + Q**2))) / 2
    assert sol.V2.reshape(-1)[1] == pytest.approx(v2, abs=1e-7)
    assert sol.I2.reshape(-1)[0] == pytest.approx((P**2 + Q**2) / v2, abs=1e-7)
