"""Radial distribution network model and loader.

Everything inside :class:`NetworkModel` is per-unit on a single-phase
equivalent basis.  Ampacities are converted with the line-to-line base
voltage, ``I_base = S_base / (sqrt(3) * V_base)``.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


class NetworkError(ValueError):
    """Raised when a network file or model violates the radial-model rules."""


@dataclass(frozen=True)
class RadialDiagnostic:
    ok: bool
    kind: str = "ok"  # ok | cycle | multi-edge | disconnected | unknown-node | unknown-substation | size
    nodes: tuple = ()
    branches: tuple = ()
    message: str = ""

    def __bool__(self) -> bool:
        return self.ok


def validate_graph(node_ids: Sequence, substation_id, edges: Iterable[tuple]) -> RadialDiagnostic:
    """Check that ``edges`` form a spanning tree of ``node_ids`` rooted at the substation."""
    nodes = list(node_ids)
    edges = [tuple(e) for e in edges]
    known = set(nodes)
    if len(known) != len(nodes):
        dup = sorted({str(n) for n in nodes if nodes.count(n) > 1})
        return RadialDiagnostic(False, "duplicate-node", tuple(dup), (), f"duplicate node ids {dup}")
    if substation_id not in known:
        return RadialDiagnostic(False, "unknown-substation", (substation_id,), (),
                                f"substation {substation_id!r} is not a node")
    bad = [e for e in edges if e[0] not in known or e[1] not in known or e[0] == e[1]]
    if bad:
        return RadialDiagnostic(False, "unknown-node", (), tuple(bad),
                                f"branches reference unknown nodes or are self-loops: {bad}")
    seen: dict[frozenset, tuple] = {}
    multi = []
    for e in edges:
        key = frozenset(e)
        if key in seen:
            multi.append(e)
        else:
            seen[key] = e
    if multi:
        return RadialDiagnostic(False, "multi-edge", (), tuple(multi),
                                f"parallel branches between the same nodes: {multi}")

    adj: dict[Any, list] = {n: [] for n in nodes}
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))
    parent_edge = {substation_id: None}
    chords = []
    queue = deque([substation_id])
    while queue:
        u = queue.popleft()
        for v, k in adj[u]:
            if k == parent_edge[u]:
                continue
            if v in parent_edge:
                # each non-tree edge is met twice; keep the first
                if edges[k] not in chords:
                    chords.append(edges[k])
                continue
            parent_edge[v] = k
            queue.append(v)
    if chords:
        return RadialDiagnostic(False, "cycle", (), tuple(chords), f"branches closing a loop: {chords}")
    unreached = tuple(n for n in nodes if n not in parent_edge)
    if unreached:
        return RadialDiagnostic(False, "disconnected", unreached, (),
                                f"nodes not reachable from the substation: {list(unreached)}")
    if len(edges) != len(nodes) - 1:
        return RadialDiagnostic(False, "size", (), (), "branch count must equal node count - 1")
    return RadialDiagnostic(True)


def validate_radial(model) -> RadialDiagnostic:
    """Tree check for anything exposing ``node_ids``, ``substation_id`` and ``branch_ends``."""
    return validate_graph(model.node_ids, model.substation_id, model.branch_ends)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkModel:
    """Immutable radial network in per-unit.

    Branches are stored parent-to-child, ordered so that branch ``k`` feeds
    node ``order[k + 1]`` (breadth-first from the substation).
    """

    node_ids: tuple
    substation_id: Any
    branch_ends: tuple  # ((from_id, to_id), ...), from = parent
    r: np.ndarray
    x: np.ndarray
    i_max: np.ndarray
    p_demand: np.ndarray  # (nodes, periods)
    q_demand: np.ndarray
    v_min: float = 0.95
    v_max: float = 1.05
    v_substation: float = 1.0
    s_base: float = 1e6  # VA
    v_base: float = 11e3  # V, line-to-line
    delta_t: float = 1.0
    name: str = ""
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        diag = validate_radial(self)
        if not diag:
            raise NetworkError(diag.message)
        n, nb = len(self.node_ids), len(self.branch_ends)
        oriented, perm = _orient(self.node_ids, self.substation_id, self.branch_ends)
        object.__setattr__(self, "node_ids", tuple(self.node_ids))
        object.__setattr__(self, "branch_ends", tuple(oriented))
        for nm in ("r", "x", "i_max"):
            arr = np.broadcast_to(np.asarray(getattr(self, nm), dtype=float), (nb,))
            object.__setattr__(self, nm, _frozen(arr[perm]))
        for nm in ("p_demand", "q_demand"):
            arr = _frozen(np.atleast_2d(getattr(self, nm)))
            object.__setattr__(self, nm, arr)
            if arr.shape[0] != n:
                raise NetworkError(f"{nm} must have one row per node")
        if self.p_demand.shape != self.q_demand.shape:
            raise NetworkError("active and reactive demand profiles differ in length")
        if np.any((self.r <= 0) & (self.x <= 0)):
            raise NetworkError("every branch needs positive resistance or reactance")
        if np.any(self.r < 0) or np.any(self.x < 0):
            raise NetworkError("negative branch impedance")
        if np.any(self.i_max <= 0):
            raise NetworkError("current limits must be positive")
        if not (0 < self.v_min < self.v_substation <= self.v_max):
            raise NetworkError("voltage limits must satisfy 0 < v_min < v_substation <= v_max")
        if np.any(self.p_demand < 0) or np.any(self.q_demand < 0):
            raise NetworkError("demands must be nonnegative (consumption-only network)")
        if not np.all(np.isfinite(self.p_demand)) or not np.all(np.isfinite(self.q_demand)):
            raise NetworkError("non-finite demand")
        if self.delta_t <= 0 or self.s_base <= 0 or self.v_base <= 0:
            raise NetworkError("bases and period length must be positive")
        self._index.update({nid: k for k, nid in enumerate(self.node_ids)})

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_branches(self) -> int:
        return len(self.branch_ends)

    @property
    def periods(self) -> int:
        return self.p_demand.shape[1]

    @property
    def i_base(self) -> float:
        return self.s_base / (math.sqrt(3.0) * self.v_base)

    @property
    def z_base(self) -> float:
        return self.v_base**2 / self.s_base

    @property
    def s_base_kw(self) -> float:
        return self.s_base / 1e3

    def index(self, node_id) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise NetworkError(f"unknown node {node_id!r}") from None

    @property
    def root(self) -> int:
        return self.index(self.substation_id)

    @property
    def from_idx(self) -> np.ndarray:
        return np.array([self.index(a) for a, _ in self.branch_ends], dtype=int)

    @property
    def to_idx(self) -> np.ndarray:
        return np.array([self.index(b) for _, b in self.branch_ends], dtype=int)

    def topological_order(self) -> list[int]:
        """Node indices, substation first, each node after its parent."""
        children: dict[int, list[int]] = {k: [] for k in range(self.n_nodes)}
        for f, t in zip(self.from_idx, self.to_idx):
            children[f].append(t)
        order, queue = [], deque([self.root])
        while queue:
            u = queue.popleft()
            order.append(u)
            queue.extend(children[u])
        return order

    def parent_branch(self) -> np.ndarray:
        """Branch index feeding each node (-1 at the substation)."""
        out = -np.ones(self.n_nodes, dtype=int)
        out[self.to_idx] = np.arange(self.n_branches)
        return out

    def with_limits(self, **changes) -> "NetworkModel":
        """Copy with some scalar fields or arrays replaced (e.g. widened limits)."""
        kw = {k: getattr(self, k) for k in (
            "node_ids", "substation_id", "branch_ends", "r", "x", "i_max", "p_demand", "q_demand",
            "v_min", "v_max", "v_substation", "s_base", "v_base", "delta_t", "name")}
        kw.update(changes)
        return NetworkModel(**kw)


# ---------------------------------------------------------------------------
# unit conversion

_IMPEDANCE_UNITS = ("ohm", "pu")
_CURRENT_UNITS = ("amp", "pu")
_POWER_UNITS = ("kw", "pu")


def to_pu(value, unit: str, kind: str, *, s_base: float, v_base: float):
    """Convert a physical quantity to per-unit. ``kind`` is impedance, current or power."""
    v = np.asarray(value, dtype=float)
    if unit == "pu":
        return v
    if kind == "impedance" and unit == "ohm":
        return v / (v_base**2 / s_base)
    if kind == "current" and unit == "amp":
        return v / (s_base / (math.sqrt(3.0) * v_base))
    if kind == "power" and unit in ("kw", "kvar"):
        return v * 1e3 / s_base
    raise NetworkError(f"unsupported unit {unit!r} for {kind}")


def from_pu(value, unit: str, kind: str, *, s_base: float, v_base: float):
    """Inverse of :func:`to_pu`."""
    one = float(to_pu(1.0, unit, kind, s_base=s_base, v_base=v_base))
    return np.asarray(value, dtype=float) / one


# ---------------------------------------------------------------------------
# file loader


def _orient(node_ids, substation, edges):
    """Return edges reoriented parent->child in breadth-first order, and the permutation."""
    adj: dict[Any, list] = {n: [] for n in node_ids}
    for k, (a, b) in enumerate(edges):
        adj[a].append((b, k))
        adj[b].append((a, k))
    seen = {substation}
    out, perm = [], []
    queue = deque([substation])
    while queue:
        u = queue.popleft()
        for v, k in adj[u]:
            if v in seen:
                continue
            seen.add(v)
            out.append((u, v))
            perm.append(k)
            queue.append(v)
    return out, perm


def network_from_dict(doc: dict) -> NetworkModel:
    try:
        bases = doc.get("bases", {})
        s_base = float(bases.get("s_base_kva", 1000.0)) * 1e3
        v_base = float(bases.get("v_base_kv", 11.0)) * 1e3
        limits = doc.get("limits", {})
        units = {"r": "ohm", "x": "ohm", "i_max": "amp", "demand": "kw"}
        units.update(doc.get("units", {}))
        nodes = [str(n["id"]) if isinstance(n, dict) else str(n) for n in doc["nodes"]]
        substation = str(doc["substation"])
        raw = doc["branches"]
        edges = [(str(b["from"]), str(b["to"])) for b in raw]
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkError(f"malformed network document: {exc!r}") from exc

    diag = validate_graph(nodes, substation, edges)
    if not diag:
        raise NetworkError(diag.message)
    oriented, perm = _orient(nodes, substation, edges)

    def col(key):
        vals = []
        for k in perm:
            b = raw[k]
            if key not in b:
                raise NetworkError(f"branch {edges[k]} lacks {key!r}")
            vals.append(float(b[key]))
        return np.array(vals)

    conv = dict(s_base=s_base, v_base=v_base)
    r = to_pu(col("r"), units["r"], "impedance", **conv)
    x = to_pu(col("x"), units["x"], "impedance", **conv)
    i_max = to_pu(col("i_max"), units["i_max"], "current", **conv)

    prof = doc.get("demand_profiles", {})
    periods = int(doc.get("periods", 0)) or None
    p_rows, q_rows = prof.get("p", {}), prof.get("q", {})
    lengths = {len(v) for v in list(p_rows.values()) + list(q_rows.values())}
    if periods is None:
        if len(lengths) != 1:
            raise NetworkError("cannot infer the number of periods from demand profiles")
        periods = lengths.pop()
    elif lengths - {periods}:
        raise NetworkError(f"demand profiles must have {periods} entries")
    unknown = (set(p_rows) | set(q_rows)) - set(nodes)
    if unknown:
        raise NetworkError(f"demand given for unknown nodes {sorted(unknown)}")
    pd = np.zeros((len(nodes), periods))
    qd = np.zeros((len(nodes), periods))
    for k, nid in enumerate(nodes):
        if nid in p_rows:
            pd[k] = p_rows[nid]
        if nid in q_rows:
            qd[k] = q_rows[nid]
    pd = to_pu(pd, units["demand"], "power", **conv)
    qd = to_pu(qd, units["demand"], "power", **conv)

    return NetworkModel(
        node_ids=tuple(nodes),
        substation_id=substation,
        branch_ends=tuple(oriented),
        r=r, x=x, i_max=i_max,
        p_demand=pd, q_demand=qd,
        v_min=float(limits.get("v_min", 0.95)),
        v_max=float(limits.get("v_max", 1.05)),
        v_substation=float(limits.get("v_substation", 1.0)),
        s_base=s_base, v_base=v_base,
        delta_t=float(doc.get("delta_t", 1.0)),
        name=str(doc.get("name", "")),
    )


def load_network(path) -> NetworkModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise NetworkError(f"{path}: {exc}") from exc
    return network_from_dict(doc)


def bundled_path(name: str = "feeder34.json") -> Path:
    return Path(__file__).parent / "data" / name
