"""Empirical CDFs of the scenario mismatch and the resulting flexibility areas."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

_CDF_TOL = 1e-12  # absorbs round-off in cumulative weights (e.g. 250 * (1/500))


class AreaError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Ecdf:
    """Right-continuous step function ``F(v) = P(sample <= v)``."""

    values: np.ndarray  # distinct sample values, increasing
    cdf: np.ndarray  # F at each value; last entry is exactly 1

    def __call__(self, v):
        k = np.searchsorted(self.values, v, side="right") - 1
        return np.where(k >= 0, self.cdf[np.maximum(k, 0)], 0.0)

    @property
    def n_jumps(self) -> int:
        return self.values.size


def build_ecdf(samples, weights=None) -> Ecdf:
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise AreaError("empirical CDF needs at least one sample")
    if not np.all(np.isfinite(s)):
        raise AreaError("samples must be finite")
    w = np.full(s.size, 1.0 / s.size) if weights is None else np.asarray(weights, float).ravel()
    if w.shape != s.shape or np.any(w < 0) or w.sum() <= 0:
        raise AreaError("weights must be nonnegative, one per sample, with positive sum")
    order = np.argsort(s, kind="stable")
    s, w = s[order], w[order]
    vals, start = np.unique(s, return_index=True)
    mass = np.add.reduceat(w, start)
    cdf = np.cumsum(mass) / w.sum()
    cdf[-1] = 1.0
    vals.setflags(write=False)
    cdf.setflags(write=False)
    return Ecdf(vals, cdf)


def inverse_ecdf(F: Ecdf, beta: float) -> float:
    """Smallest sample ``v`` with ``F(v) >= beta``; 0 at ``beta = 0`` and the max at 1."""
    beta = float(beta)
    if not 0.0 <= beta <= 1.0:
        raise AreaError(f"risk level {beta} outside [0, 1]")
    if beta == 0.0:
        return 0.0
    if beta == 1.0:
        return float(F.values[-1])
    k = int(np.searchsorted(F.cdf, beta - _CDF_TOL, side="left"))
    return float(F.values[min(k, F.values.size - 1)])


@dataclass(frozen=True, eq=False)
class FlexibilityArea:
    pool_ids: tuple
    lower_kw: np.ndarray  # (S, T) reserve
    upper_kw: np.ndarray  # (S, T)
    beta: np.ndarray  # (S, T)
    s_base_kw: float = 1000.0

    @property
    def periods(self) -> int:
        return self.lower_kw.shape[1]

    @property
    def lower_pu(self) -> np.ndarray:
        return self.lower_kw / self.s_base_kw

    @property
    def upper_pu(self) -> np.ndarray:
        return self.upper_kw / self.s_base_kw

    def to_dict(self) -> dict:
        return {
            "pool_ids": list(self.pool_ids),
            "s_base_kw": self.s_base_kw,
            "lower_kw": self.lower_kw.tolist(),
            "upper_kw": self.upper_kw.tolist(),
            "beta": self.beta.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FlexibilityArea":
        return cls(tuple(d["pool_ids"]), np.array(d["lower_kw"], float), np.array(d["upper_kw"], float),
                   np.array(d["beta"], float), float(d.get("s_base_kw", 1000.0)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pool", "period", "lower_kw", "upper_kw", "beta"])
        for s, pid in enumerate(self.pool_ids):
            for t in range(self.periods):
                w.writerow([pid, t, repr(float(self.lower_kw[s, t])), repr(float(self.upper_kw[s, t])),
                            repr(float(self.beta[s, t]))])
        return buf.getvalue()


def beta_table(beta, pool_ids, periods: int) -> np.ndarray:
    """Expand a scalar, an ``(S, T)`` array, or a mapping to an ``(S, T)`` table.

    Mappings may be keyed by pool id (value: scalar or per-period list) or by
    ``(pool_id, period)`` tuples; every pool/period must be covered.
    """
    S = len(pool_ids)
    if isinstance(beta, dict):
        out = np.full((S, periods), np.nan)
        for key, val in beta.items():
            if isinstance(key, tuple):
                pid, t = key
                if pid not in pool_ids:
                    raise AreaError(f"risk table names unknown pool {pid!r}")
                out[list(pool_ids).index(pid), int(t)] = float(val)
            else:
                if key not in pool_ids:
                    raise AreaError(f"risk table names unknown pool {key!r}")
                out[list(pool_ids).index(key)] = np.broadcast_to(np.asarray(val, float), (periods,))
        if np.any(np.isnan(out)):
            s, t = np.argwhere(np.isnan(out))[0]
            raise AreaError(f"no risk level for pool {pool_ids[s]!r}, period {t}")
    else:
        arr = np.asarray(beta, float)
        try:
            out = np.broadcast_to(arr, (S, periods)).copy()
        except ValueError:
            raise AreaError(f"risk levels of shape {arr.shape} do not fit ({S}, {periods})") from None
    if np.any((out < 0) | (out > 1)):
        raise AreaError("risk levels must lie in [0, 1]")
    return out


def flexibility_areas(sol, beta) -> FlexibilityArea:
    """Areas ``[p*, p* + F^-1(beta)]`` from the scenario mismatches of a solved plan."""
    if sol.p.ndim != 2:
        raise AreaError("areas need a plan with a shared (first-stage) reserve")
    return areas_from_samples(sol.pool_ids, sol.p, sol.rho, sol.probabilities, beta, sol.s_base_kw)


def areas_from_samples(pool_ids, p_kw, rho_kw, probabilities, beta, s_base_kw=1000.0) -> FlexibilityArea:
    """Same construction from raw arrays: ``p_kw`` (S, T), ``rho_kw`` (S, T, W)."""
    p_kw = np.asarray(p_kw, float)
    rho_kw = np.asarray(rho_kw, float)
    S, T = p_kw.shape
    B = beta_table(beta, list(pool_ids), T)
    upper = np.array([[p_kw[s, t] + inverse_ecdf(build_ecdf(rho_kw[s, t], probabilities), B[s, t])
                       for t in range(T)] for s in range(S)]).reshape(S, T)
    return FlexibilityArea(tuple(pool_ids), p_kw.copy(), upper, B, s_base_kw)
