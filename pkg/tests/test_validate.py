import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_feeder, simple_pool, small_instance, task
from evflex.flexarea import FlexibilityArea
from evflex.operation import operate_within_areas
from evflex.utility import UtilityError, evaluate_utility
from evflex.validate import (PowerFlowError, branch_flow_residuals, draw_consumption, mc_validate, nodal_loads,
                             payment_analysis, power_flow)


def test_no_load_is_flat():
    net = random_feeder(0, 8)
    st_ = power_flow(net, np.zeros(8), np.zeros(8))
    assert np.allclose(st_.V2, net.v_substation**2) and np.allclose(st_.I2, 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 34))
def test_sweep_satisfies_branch_flow_equations(seed, n):
    net = random_feeder(seed, n)
    p, q = net.p_demand, net.q_demand  # (B, T) batch of load cases
    state = power_flow(net, p, q)
    res = branch_flow_residuals(net, state, p, q)
    assert max(res.values()) < 1e-10
    assert np.all(state.converged)


def test_batch_equals_single_columns():
    net = random_feeder(3, 12, periods=4)
    both = power_flow(net, net.p_demand, net.q_demand)
    one = power_flow(net, net.p_demand[:, 2], net.q_demand[:, 2])
    assert np.allclose(both.V2[:, 2], one.V2, atol=1e-14)


def test_collapse_strict_and_lenient():
    net = random_feeder(1, 6, periods=2)
    p = np.zeros((6, 2))
    p[-1, 1] = 50.0  # 50 MW at 1 MVA base: no solution
    with pytest.raises(PowerFlowError):
        power_flow(net, p, np.zeros_like(p))
    st_ = power_flow(net, p, np.zeros_like(p), strict=False)
    assert st_.converged.tolist() == [True, False]
    assert np.all(np.isnan(st_.V2[:, 1])) and np.all(np.isfinite(st_.V2[:, 0]))


def test_bad_load_shapes():
    net = random_feeder(1, 6)
    with pytest.raises(ValueError):
        power_flow(net, np.zeros(5), np.zeros(5))
    with pytest.raises(ValueError):
        power_flow(net, np.full(6, np.nan), np.zeros(6))


def test_nodal_loads_adds_pool_draws():
    net = random_feeder(2, 5, periods=2)
    draws = np.array([[[100.0, 0.0], [0.0, 50.0]]])  # (S=1, T=2, W=2) kW
    p, q = nodal_loads(net, [net.node_ids[3]], draws)
    k = net.index(net.node_ids[3])
    assert p.shape == (5, 2, 2)
    assert p[k, 0, 0] == pytest.approx(net.p_demand[k, 0] + 0.1)
    assert np.array_equal(q[:, :, 0], net.q_demand)


def _area(S=1, T=3, upper=20.0, lower=5.0, beta=0.5):
    return FlexibilityArea(tuple(f"p{k}" for k in range(S)), np.full((S, T), lower), np.full((S, T), upper),
                           np.full((S, T), beta))


def test_draws_reuse_random_numbers():
    a, b = _area(upper=20.0), _area(upper=40.0)
    da, db = draw_consumption(a, 50, 3), draw_consumption(b, 50, 3)
    assert np.all((da >= 5.0) & (da <= 20.0))
    # same unit draws, stretched over a wider band
    assert np.allclose((da - 5.0) / 15.0, (db - 5.0) / 35.0)


def _pools_on(net, S=1):
    return [simple_pool(f"p{k}", net.node_ids[-1 - k], net.periods, [task(f"t{k}", 0.5)]) for k in range(S)]


def test_mc_is_deterministic_and_zero_width_is_constant():
    net = random_feeder(5, 10)
    pools = _pools_on(net)
    r1 = mc_validate(net, pools, _area(upper=300.0), 200, 9)
    r2 = mc_validate(net, pools, _area(upper=300.0), 200, 9)
    assert r1.to_json() == r2.to_json()
    flat = mc_validate(net, pools, _area(upper=5.0), 50, 9)
    assert np.all(flat.min_v == flat.min_v[0])


def test_mc_rejects_mismatched_areas():
    net = random_feeder(5, 10)
    with pytest.raises(ValueError):
        mc_validate(net, _pools_on(net, 2), _area(S=1), 10, 1)
    with pytest.raises(ValueError):
        mc_validate(net, _pools_on(net), _area(), 0, 1)


def test_violation_frequencies_count_any_period():
    net = random_feeder(5, 10)
    pools = _pools_on(net)
    rep = mc_validate(net, pools, _area(upper=5.0), 20, 1)
    rep.min_v[3, 1] = net.v_min - 0.01
    assert rep.voltage_violation_frequency == pytest.approx(1 / 20)
    assert rep.violation_frequency == pytest.approx(1 / 20)
    assert rep.traces_csv().count("\n") == 1 + net.periods
    assert rep.ecdf_csv().count("\n") == 1 + 2 * 20


def test_payment_by_hand():
    net = random_feeder(0, 4, periods=2)
    pool = simple_pool("a", net.node_ids[1], 2, price=0.25)
    x = np.array([[[10.0, 0.0], [4.0, 2.0]]])  # one task, (N, T, W)
    Phi = np.array([[0.0, 60.0]])
    rep = payment_analysis([pool], [("a", "t")], x, Phi)
    assert rep.revenue.tolist() == pytest.approx([0.25 * 14, 0.25 * 2])
    assert rep.cost.tolist() == pytest.approx([0.0, evaluate_utility(pool.utility, 60.0)])
    assert rep.summary()["count"] == 2
    with pytest.raises(UtilityError):
        payment_analysis([pool], [("a", "t")], x, np.array([[0.0, 1e4]]))


def test_operating_inside_areas_respects_caps():
    net, pools, _ = small_instance(0, 6)
    area = FlexibilityArea(("a", "b"), np.zeros((2, 3)), np.array([[6.0] * 3, [4.0] * 3]), np.full((2, 3), 0.5))
    res = operate_within_areas(net, pools, area, 2, 5)
    assert res.draw_kw.shape == (2, 3, 2)
    assert np.all(res.draw_kw <= area.upper_kw[:, :, None] + 1e-6)
    assert res.payments.total.shape == (2,)


def test_two_bus_closed_form():
    from evflex.network import network_from_dict

    net = network_from_dict({"nodes": ["1", "2"], "substation": "1", "periods": 1,
                             "branches": [{"from": "1", "to": "2", "r": 0.05, "x": 0.05, "i_max": 400.0}],
                             "demand_profiles": {"p": {"2": [0.0]}, "q": {"2": [0.0]}}})
    r, x = net.r[0], net.x[0]  # per unit after conversion
    P, Q = 0.1, 0.05
    b = 1.0 - 2 * (r * P + x * Q)
    c = (r**2 + x**2) * (P**2 + Q**2)
    v2 = (b + np.sqrt(b**2 - 4 * c)) / 2  # high-voltage root of v2^2 - b v2 + c = 0
    st_ = power_flow(net, np.array([0.0, P]), np.array([0.0, Q]))
    assert st_.V2[1] == pytest.approx(v2, abs=1e-10)
    assert st_.I2[0] == pytest.approx((P**2 + Q**2) / v2, abs=1e-10)


def test_payment_examples():
    net = random_feeder(0, 4, periods=2)
    pool = simple_pool("a", net.node_ids[1], 2, price=0.2)
    x = np.array([[[10.0], [0.0]]])  # 10 kWh in the first hour
    rep = payment_analysis([pool], [("a", "t")], x, np.array([[0.0]]))
    assert rep.total[0] == 2.0 and rep.total[0] == rep.revenue[0]
    a1 = pool.utility.alpha[1]
    rep = payment_analysis([pool], [("a", "t")], x, np.array([[a1]]))
    assert rep.total[0] == pytest.approx(2.0 - evaluate_utility(pool.utility, a1))
    s = rep.summary()
    assert {"median", "q25", "q75", "p05", "p95"} <= set(s)


def test_report_schema_for_large_runs():
    net = random_feeder(5, 10)
    pools = _pools_on(net)
    for beta in (0.57, 0.99):
        rep = mc_validate(net, pools, _area(upper=40.0, beta=beta), 5000, 3)
        d = rep.to_dict()
        assert d["sims"] == 5000 and d["beta"] == [[beta] * 3]
        assert 0.0 <= d["violation_frequency"] <= 1.0
        assert len(d["period_stats"]["min_v_mean"]) == net.periods
