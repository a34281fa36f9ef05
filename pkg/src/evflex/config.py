"""Run configuration: a versioned JSON document plus command-line overrides.

Precedence, lowest to highest: built-in defaults, the config file, flags.
Relative paths in a config file resolve against the file's directory; a
null network or pools path selects the bundled 34-bus dataset.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conic import SolverOptions
from .network import bundled_path

SCHEMA_VERSION = 1
MODES = ("base", "flex", "validate", "payment", "full")

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "mode": "full",
    "paths": {"network": None, "pools": None, "out": "evflex-out"},
    "scenarios": {"count": 50, "seed": 1},
    "beta": 0.9,
    "build": {"loss_price": 0.2},
    "solver": {"heuristic_only": True},
    "validation": {"sims": 1000, "seed": 7, "betas": [0.0, 0.25, 0.5, 0.75, 1.0]},
    "payment": {"count": 50, "seed": 11},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {where + k!r}")
        if isinstance(base[k], dict) and k != "solver":
            if not isinstance(v, dict):
                raise ConfigError(f"config key {where + k!r} must be an object")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        elif k == "solver":
            if not isinstance(v, dict):
                raise ConfigError("config key 'solver' must be an object")
            out[k] = {**base[k], **v}
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_beta(beta) -> None:
    if isinstance(beta, dict):
        vals = []
        for v in beta.values():
            vals.extend(np.ravel(np.asarray(v, float)).tolist())
    else:
        try:
            vals = np.ravel(np.asarray(beta, float)).tolist()
        except (TypeError, ValueError):
            raise ConfigError(f"beta {beta!r} is not numeric") from None
    if not vals or not all(0.0 <= v <= 1.0 for v in vals):
        raise ConfigError(f"beta must lie in [0, 1], got {beta!r}")


def _positive_int(v, name) -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    return v


@dataclass(frozen=True)
class RunConfig:
    doc: dict  # merged, validated document
    base_dir: Path

    @property
    def mode(self) -> str:
        return self.doc["mode"]

    def _path(self, key: str, bundled: str) -> Path:
        p = self.doc["paths"][key]
        if p is None:
            return bundled_path(bundled)
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def network_path(self) -> Path:
        return self._path("network", "feeder34.json")

    @property
    def pools_path(self) -> Path:
        return self._path("pools", "pools.json")

    @property
    def out_dir(self) -> Path:
        p = Path(self.doc["paths"]["out"])
        return p if p.is_absolute() else Path.cwd() / p

    @property
    def beta(self):
        b = self.doc["beta"]
        if isinstance(b, dict):  # JSON keys are strings; "pool:period" selects one cell
            out = {}
            for k, v in b.items():
                if ":" in k:
                    pid, t = k.rsplit(":", 1)
                    out[(pid, int(t))] = v
                else:
                    out[k] = v
            return out
        return b

    def solver_options(self) -> SolverOptions:
        return SolverOptions(**self.doc["solver"])

    def to_json(self) -> str:
        return json.dumps(self.doc, indent=1, sort_keys=True)


def build_config(doc: dict | None = None, base_dir: Path | None = None, overrides: dict | None = None) -> RunConfig:
    merged = _merge(DEFAULTS, doc or {})
    if merged["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {merged['schema_version']!r}")
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        sect, _, key = k.partition(".")
        if key:
            merged[sect][key] = v
        else:
            merged[sect] = v
    if merged["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {merged['mode']!r}")
    _check_beta(merged["beta"])
    _check_beta(merged["validation"]["betas"])
    _positive_int(merged["scenarios"]["count"], "scenarios.count")
    _positive_int(merged["validation"]["sims"], "validation.sims")
    _positive_int(merged["payment"]["count"], "payment.count")
    for nm in ("scenarios", "validation", "payment"):
        s = merged[nm]["seed"]
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError(f"{nm}.seed must be a nonnegative integer")
    if merged["build"]["loss_price"] is None or merged["build"]["loss_price"] < 0:
        raise ConfigError("build.loss_price must be nonnegative")
    try:
        SolverOptions(**merged["solver"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver options: {exc}") from None
    cfg = RunConfig(merged, Path(base_dir) if base_dir else Path.cwd())
    for nm, p in (("network", cfg.network_path), ("pools", cfg.pools_path)):
        if not p.is_file():
            raise ConfigError(f"{nm} file {p} does not exist")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    if path is None:
        return build_config(None, None, overrides)
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return build_config(doc, path.parent, overrides)
