"""Charging-pool descriptions and the pools/utilities file."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .network import NetworkError, NetworkModel
from .scenarios import TaskSpec
from .utility import UtilityFunction


@dataclass(frozen=True, eq=False)
class ChargingPoolSpec:
    pool_id: str
    node: str
    p_max: np.ndarray  # (periods,) kW
    energy_price: np.ndarray  # (periods,) currency/kWh
    utility: UtilityFunction
    tasks: tuple = ()

    def __post_init__(self):
        for nm in ("p_max", "energy_price"):
            arr = np.array(getattr(self, nm), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, nm, arr)
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if np.any(self.p_max < 0):
            raise ValueError(f"pool {self.pool_id}: p_max must be nonnegative")
        if np.any(self.energy_price < 0):
            raise ValueError(f"pool {self.pool_id}: energy price must be nonnegative")

    def check_against(self, net: NetworkModel) -> None:
        net.index(self.node)
        if self.p_max.shape != (net.periods,) or self.energy_price.shape != (net.periods,):
            raise NetworkError(f"pool {self.pool_id}: profiles must have {net.periods} periods")

    def with_p_max(self, p_max) -> "ChargingPoolSpec":
        return ChargingPoolSpec(self.pool_id, self.node, p_max, self.energy_price, self.utility, self.tasks)


def _profile(value, periods: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(periods, float(arr))
    if arr.shape != (periods,):
        raise ValueError(f"profile must be a scalar or have {periods} entries")
    return arr


def pools_from_dict(doc: dict, periods: int) -> list[ChargingPoolSpec]:
    utilities = {k: UtilityFunction.from_dict(v, name=k) for k, v in doc.get("utilities", {}).items()}
    out = []
    for p in doc["pools"]:
        u = p["utility"]
        if isinstance(u, str):
            if u not in utilities:
                raise ValueError(f"pool {p['id']}: unknown utility {u!r}")
            u = utilities[u]
        else:
            u = UtilityFunction.from_dict(u, name=str(p["id"]))
        tasks = [TaskSpec(str(t["id"]), float(t["mean_arrival"]), float(t["mean_duration_rate"]),
                          float(t.get("e_min", 0.0)), float(t.get("e_max", 100.0)), float(t.get("x_max", 22.0)))
                 for t in p.get("tasks", [])]
        out.append(ChargingPoolSpec(
            pool_id=str(p["id"]), node=str(p["node"]),
            p_max=_profile(p.get("p_max_kw", 200.0), periods),
            energy_price=_profile(p.get("price", 0.2), periods),
            utility=u, tasks=tuple(tasks)))
    ids = [p.pool_id for p in out]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate pool ids")
    return out


def load_pools(path, periods: int) -> list[ChargingPoolSpec]:
    return pools_from_dict(json.loads(Path(path).read_text()), periods)
