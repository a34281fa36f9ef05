"""Regenerate the bundled 34-node feeder and charging-pool files.

The numbers are illustrative: nominal loads total 1860 kW / 1230 kvar and a
daily shape puts the demand peaks in the morning and evening.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "evflex" / "data"

# hourly demand multipliers (fraction of nominal), peaks at 8-10 h and 18-20 h
SHAPE = [0.30, 0.27, 0.26, 0.26, 0.28, 0.33, 0.42, 0.52, 0.60, 0.62, 0.60, 0.54,
         0.50, 0.48, 0.47, 0.49, 0.53, 0.58, 0.62, 0.62, 0.60, 0.50, 0.40, 0.34]

P_TOTAL_KW, Q_TOTAL_KVAR = 1860.0, 1230.0
SEG_OHM = (0.30, 0.26)  # typical 11 kV overhead segment
TRAFO_OHM = (0.40, 2.60)


def topology():
    edges = [("1", "2")]
    main = [str(k) for k in range(2, 17)]
    edges += list(zip(main[:-1], main[1:]))
    second = ["3"] + [str(k) for k in range(17, 28)]
    edges += list(zip(second[:-1], second[1:]))
    for path in (["6", "28", "29", "30"], ["9", "31", "32"], ["12", "33", "34"]):
        edges += list(zip(path[:-1], path[1:]))
    return edges


def main():
    rng = np.random.default_rng(20240611)
    edges = topology()
    nodes = [str(k) for k in range(1, 35)]
    load_nodes = nodes[2:]
    w = rng.uniform(0.6, 1.4, len(load_nodes))
    p_nom = np.round(P_TOTAL_KW * w / w.sum(), 1)
    p_nom[-1] += round(P_TOTAL_KW - p_nom.sum(), 1)
    pf_ratio = rng.uniform(0.55, 0.75, len(load_nodes))
    q_nom = p_nom * pf_ratio
    q_nom = np.round(q_nom * Q_TOTAL_KVAR / q_nom.sum(), 1)
    q_nom[-1] += round(Q_TOTAL_KVAR - q_nom.sum(), 1)
    length = rng.uniform(0.7, 1.3, len(edges))
    branches = []
    for k, (a, b) in enumerate(edges):
        if k == 0:
            r, x, cap = TRAFO_OHM[0], TRAFO_OHM[1], 88.0
        else:
            r, x, cap = SEG_OHM[0] * length[k], SEG_OHM[1] * length[k], 250.0
        branches.append({"from": a, "to": b, "r": round(r, 4), "x": round(x, 4), "i_max": cap})
    shape = np.array(SHAPE)
    doc = {
        "name": "feeder34 (illustrative)",
        "bases": {"s_base_kva": 1000.0, "v_base_kv": 11.0},
        "limits": {"v_min": 0.95, "v_max": 1.05, "v_substation": 1.0},
        "units": {"r": "ohm", "x": "ohm", "i_max": "amp", "demand": "kw"},
        "periods": 24,
        "delta_t": 1.0,
        "nodes": nodes,
        "substation": "1",
        "branches": branches,
        "demand_profiles": {
            "p": {n: np.round(p * shape, 3).tolist() for n, p in zip(load_nodes, p_nom)},
            "q": {n: np.round(q * shape, 3).tolist() for n, q in zip(load_nodes, q_nom)},
        },
    }
    (OUT / "feeder34.json").write_text(json.dumps(doc, indent=1) + "\n")

    # charging pools: (id, node, task count, cap kW, [(share, mean arrival, duration rate)])
    pools = [
        ("16", "16", 30, 300.0, [(0.3, 8, 1 / 3), (0.7, 18, 1 / 3)]),
        ("20", "20", 59, 450.0, [(0.6, 8, 1 / 4), (0.4, 17, 1 / 3)]),
        ("27", "27", 36, 350.0, [(0.4, 9, 1 / 3), (0.6, 18, 1 / 3)]),
        ("28", "28", 16, 200.0, [(0.5, 12, 1 / 2), (0.5, 18, 1 / 3)]),
    ]
    utilities, pool_docs = {}, []
    for pid, node, n, cap, mix in pools:
        top = 100.0 * n
        a1, a2 = 0.05 * top, 0.2 * top
        h = [0.30, 0.10, 0.60]
        b1 = 5.0
        f_a1 = h[0] * a1 + b1
        b2 = f_a1 - h[1] * a1
        f_a2 = h[1] * a2 + b2
        b3 = f_a2 - h[2] * a2
        utilities[f"pool{pid}"] = {"alpha": [0.0, a1, a2, top], "h": h, "b": [b1, b2, b3]}
        counts = np.floor(np.array([m[0] for m in mix]) * n).astype(int)
        counts[-1] = n - counts[:-1].sum()
        tasks = []
        for (share, arr, rate), c in zip(mix, counts):
            for _ in range(c):
                tasks.append({"id": f"{pid}-{len(tasks) + 1:02d}", "mean_arrival": arr,
                              "mean_duration_rate": round(rate, 6), "e_min": 5.0, "e_max": 100.0,
                              "x_max": 22.0})
        pool_docs.append({"id": pid, "node": node, "p_max_kw": cap, "price": 0.2,
                          "utility": f"pool{pid}", "tasks": tasks})
    (OUT / "pools.json").write_text(json.dumps({"utilities": utilities, "pools": pool_docs}, indent=1) + "\n")


if __name__ == "__main__":
    main()
