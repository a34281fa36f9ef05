"""Seeded charging-task scenarios.

Each random quantity is drawn by inverse transform from one uniform taken
from a Philox stream keyed by ``(seed, pool/task id, field)``; draw ``w`` is
the ``w``-th output of that stream.  Generation order, subsetting and
parallel schedules therefore never change a realization.
"""

from __future__ import annotations

import csv
import io
import json
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

FIELDS = {"arrival": 1, "duration": 2, "energy": 3, "consumption": 4}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    mean_arrival: float  # period index
    mean_duration_rate: float  # 1/h
    e_min: float = 0.0  # kWh
    e_max: float = 100.0  # kWh
    x_max: float = 22.0  # kW

    def check(self, horizon: int) -> None:
        if not 0 <= self.mean_arrival < horizon:
            raise ScenarioError(f"task {self.task_id}: mean arrival outside the horizon")
        if self.mean_duration_rate <= 0:
            raise ScenarioError(f"task {self.task_id}: duration rate must be positive")
        if not 0 <= self.e_min <= self.e_max:
            raise ScenarioError(f"task {self.task_id}: need 0 <= e_min <= e_max")
        if self.x_max <= 0:
            raise ScenarioError(f"task {self.task_id}: x_max must be positive")


def stream_key(seed: int, task_key: str, fieldname: str) -> np.ndarray:
    """128-bit Philox key for one (seed, task, field) stream."""
    tag = zlib.crc32(task_key.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, FIELDS[fieldname]))
    return ss.generate_state(2, dtype=np.uint64)


def uniforms(seed: int, task_key: str, fieldname: str, count: int, start: int = 0) -> np.ndarray:
    """Uniforms ``start .. start+count-1`` of the keyed stream."""
    bitgen = np.random.Philox(key=stream_key(seed, task_key, fieldname))
    gen = np.random.Generator(bitgen)
    if start:
        gen.random(start)
    return gen.random(count)


def raw_draws(task: TaskSpec, task_key: str, seed: int, count: int) -> dict[str, np.ndarray]:
    """Unclamped arrival (Poisson), continuous duration (exponential, hours) and energy (uniform)."""
    ua = uniforms(seed, task_key, "arrival", count)
    ud = uniforms(seed, task_key, "duration", count)
    ue = uniforms(seed, task_key, "energy", count)
    arrival = np.maximum(stats.poisson.ppf(ua, task.mean_arrival), 0).astype(np.int64)
    duration = -np.log1p(-ud) / task.mean_duration_rate
    energy = task.e_min + ue * (task.e_max - task.e_min)
    return {"arrival": arrival, "duration": duration, "energy": energy}


def realize(task: TaskSpec, draws: dict, horizon: int, delta_t: float):
    """Apply the horizon clamps and the full-power energy cap to raw draws."""
    a = np.clip(draws["arrival"], 0, horizon - 2)
    steps = np.ceil(draws["duration"] / delta_t).astype(np.int64)
    d = np.minimum(np.maximum(a + steps, a + 1), horizon)
    e = np.minimum(draws["energy"], task.x_max * (d - a) * delta_t)
    return a, d, e


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Task realizations; periods ``arrival <= t < departure`` are available for charging."""

    seed: int
    horizon: int
    delta_t: float
    task_keys: tuple  # ((pool_id, task_id), ...)
    x_max: np.ndarray  # (tasks,) kW
    probabilities: np.ndarray  # (scenarios,)
    arrival: np.ndarray  # (tasks, scenarios) int
    departure: np.ndarray
    energy: np.ndarray  # kWh
    _pool_rows: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        for nm in ("x_max", "probabilities", "arrival", "departure", "energy"):
            arr = np.array(getattr(self, nm))
            arr.setflags(write=False)
            object.__setattr__(self, nm, arr)
        if abs(self.probabilities.sum() - 1.0) > 1e-12 or np.any(self.probabilities < 0):
            raise ScenarioError("scenario probabilities must be nonnegative and sum to one")
        a, d, e = self.arrival, self.departure, self.energy
        if np.any(a < 0) or np.any(a >= d) or np.any(d > self.horizon):
            raise ScenarioError("every realization needs 0 <= arrival < departure <= horizon")
        cap = self.x_max[:, None] * (d - a) * self.delta_t
        if np.any(e < 0) or np.any(e > cap * (1 + 1e-12)):
            raise ScenarioError("energy must lie in [0, x_max * window]")
        rows: dict = {}
        for k, (pool, _) in enumerate(self.task_keys):
            rows.setdefault(pool, []).append(k)
        self._pool_rows.update({p: np.array(v) for p, v in rows.items()})

    @property
    def count(self) -> int:
        return self.probabilities.size

    @property
    def n_tasks(self) -> int:
        return len(self.task_keys)

    def rows_of_pool(self, pool_id) -> np.ndarray:
        return self._pool_rows.get(pool_id, np.zeros(0, dtype=int))

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "horizon": int(self.horizon),
            "delta_t": float(self.delta_t),
            "tasks": [{"pool": p, "task": t, "x_max": float(x)} for (p, t), x in zip(self.task_keys, self.x_max)],
            "probabilities": self.probabilities.tolist(),
            "arrival": self.arrival.tolist(),
            "departure": self.departure.tolist(),
            "energy_kwh": self.energy.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSet":
        return cls(
            seed=d["seed"], horizon=d["horizon"], delta_t=d["delta_t"],
            task_keys=tuple((t["pool"], t["task"]) for t in d["tasks"]),
            x_max=np.array([t["x_max"] for t in d["tasks"]], float),
            probabilities=np.array(d["probabilities"], float),
            arrival=np.array(d["arrival"], dtype=np.int64).reshape(len(d["tasks"]), -1),
            departure=np.array(d["departure"], dtype=np.int64).reshape(len(d["tasks"]), -1),
            energy=np.array(d["energy_kwh"], float).reshape(len(d["tasks"]), -1),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "pool", "task", "arrival", "departure", "energy_kwh"])
        for s in range(self.count):
            for k, (pool, task) in enumerate(self.task_keys):
                w.writerow([s, pool, task, int(self.arrival[k, s]), int(self.departure[k, s]),
                            repr(float(self.energy[k, s]))])
        return buf.getvalue()

    def subset(self, scenarios: Sequence[int]) -> "ScenarioSet":
        """Equiprobable subsample of the given scenario columns."""
        idx = np.asarray(scenarios, dtype=int)
        return ScenarioSet(self.seed, self.horizon, self.delta_t, self.task_keys, self.x_max,
                           np.full(idx.size, 1.0 / idx.size), self.arrival[:, idx],
                           self.departure[:, idx], self.energy[:, idx])


def generate_scenarios(pools, count: int, seed: int, horizon: int, delta_t: float = 1.0) -> ScenarioSet:
    """Draw ``count`` equiprobable scenarios for every task of every pool."""
    if count < 1:
        raise ScenarioError("need at least one scenario")
    if horizon < 2:
        raise ScenarioError("horizon must have at least two periods")
    keys, xmax, A, D, E = [], [], [], [], []
    for pool in pools:
        for task in pool.tasks:
            task.check(horizon)
            key = f"{pool.pool_id}/{task.task_id}"
            a, d, e = realize(task, raw_draws(task, key, seed, count), horizon, delta_t)
            keys.append((pool.pool_id, task.task_id))
            xmax.append(task.x_max)
            A.append(a), D.append(d), E.append(e)
    shape = (len(keys), count)
    return ScenarioSet(
        seed=int(seed), horizon=int(horizon), delta_t=float(delta_t), task_keys=tuple(keys),
        x_max=np.array(xmax, float),
        probabilities=np.full(count, 1.0 / count),
        arrival=np.array(A, dtype=np.int64).reshape(shape),
        departure=np.array(D, dtype=np.int64).reshape(shape),
        energy=np.array(E, float).reshape(shape),
    )


@dataclass(frozen=True)
class ScenarioSummary:
    task_keys: tuple
    mean_arrival: np.ndarray
    mean_duration: np.ndarray  # periods
    mean_energy: np.ndarray
    plugged_in: np.ndarray  # (horizon,) expected number of connected tasks


def scenario_stats(sset: ScenarioSet) -> ScenarioSummary:
    pi = sset.probabilities
    t = np.arange(sset.horizon)
    present = (sset.arrival[:, :, None] <= t) & (t < sset.departure[:, :, None])
    return ScenarioSummary(
        task_keys=sset.task_keys,
        mean_arrival=sset.arrival @ pi,
        mean_duration=(sset.departure - sset.arrival) @ pi,
        mean_energy=sset.energy @ pi,
        plugged_in=np.einsum("nwt,w->t", present, pi),
    )
