import warnings

import numpy as np
import pytest
from hypothesis import strategies as st

from evflex.network import bundled_path, load_network, network_from_dict
from evflex.pools import ChargingPoolSpec, load_pools
from evflex.scenarios import TaskSpec
from evflex.utility import UtilityFunction


@pytest.fixture(scope="session")
def feeder():
    return load_network(bundled_path())


@pytest.fixture(scope="session")
def bundled_pools(feeder):
    return load_pools(bundled_path("pools.json"), feeder.periods)


def random_feeder_doc(seed: int, n_nodes: int, periods: int = 3, load_kw: float = 60.0) -> dict:
    """Random radial feeder: each new node hangs off a uniformly chosen earlier node."""
    rng = np.random.default_rng(seed)
    nodes = [str(k) for k in range(1, n_nodes + 1)]
    branches = []
    for k in range(1, n_nodes):
        parent = nodes[int(rng.integers(0, k))]
        branches.append({"from": parent, "to": nodes[k], "r": float(rng.uniform(0.05, 0.5)),
                         "x": float(rng.uniform(0.05, 0.5)), "i_max": 400.0})
    shape = rng.uniform(0.5, 1.0, periods)
    p = {nid: (load_kw * rng.uniform(0.2, 1.0) * shape).tolist() for nid in nodes[1:]}
    q = {nid: (0.5 * np.asarray(v)).tolist() for nid, v in p.items()}
    return {"nodes": nodes, "substation": "1", "branches": branches, "periods": periods,
            "demand_profiles": {"p": p, "q": q}}


def random_feeder(seed: int, n_nodes: int, periods: int = 3):
    return network_from_dict(random_feeder_doc(seed, n_nodes, periods))


def simple_pool(pool_id: str, node: str, periods: int, tasks=(), utility=None, p_max=100.0, price=0.2):
    u = utility or UtilityFunction(np.array([0.0, 50.0, 200.0]), np.array([0.3, 0.5]), np.array([1.0, -5.0]))
    return ChargingPoolSpec(pool_id, node, np.full(periods, p_max), np.full(periods, price), u, tuple(tasks))


def task(tid: str, mean_arrival=1.0, rate=0.5, e_min=5.0, e_max=30.0, x_max=22.0):
    return TaskSpec(tid, mean_arrival, rate, e_min, e_max, x_max)


@st.composite
def utilities(draw, max_pieces: int = 5):
    """Arbitrary lower-semicontinuous piecewise-linear curves (jumps and slope changes allowed)."""
    k = draw(st.integers(1, max_pieces))
    widths = draw(st.lists(st.floats(0.5, 50.0), min_size=k, max_size=k))
    alpha = np.concatenate([[0.0], np.cumsum(widths)])
    h = np.array(draw(st.lists(st.floats(-1.0, 2.0), min_size=k, max_size=k)))
    b = np.array(draw(st.lists(st.floats(-20.0, 40.0), min_size=k, max_size=k)))
    with warnings.catch_warnings():  # the all-zero curve is legal, only suspicious
        warnings.simplefilter("ignore", UserWarning)
        return UtilityFunction(alpha, h, b)


def random_utility(rng: np.random.Generator, max_pieces: int = 5) -> UtilityFunction:
    k = int(rng.integers(1, max_pieces + 1))
    alpha = np.concatenate([[0.0], np.cumsum(rng.uniform(0.5, 50.0, k))])
    return UtilityFunction(alpha, rng.uniform(-1.0, 2.0, k), rng.uniform(-20.0, 40.0, k))


def small_instance(seed: int, n_nodes: int, scenarios: int = 2, periods: int = 3):
    """Random feeder with two capacity-limited pools whose fixed-charge utilities need binaries."""
    from evflex.scenarios import generate_scenarios

    net = random_feeder(seed, n_nodes, periods)
    far = net.node_ids[-1]
    pools = [simple_pool("a", net.node_ids[min(2, n_nodes - 1)], periods, p_max=12.0,
                         tasks=[task("a1", 0.5, e_min=20.0, e_max=60.0), task("a2", 1.0, e_min=10.0)]),
             simple_pool("b", far, periods, p_max=8.0, tasks=[task("b1", 0.2, e_max=50.0)])]
    return net, pools, generate_scenarios(pools, scenarios, seed, periods, net.delta_t)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
