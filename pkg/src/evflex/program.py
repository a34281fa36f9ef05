"""Solver-independent conic program: bounded variables, sparse linear rows,
rotated second-order cones and a linear objective.

Variables and rows are created in named blocks with an index shape, so every
column or row maps back to a symbol and an index tuple.  A rotated cone over
columns ``(v, i, w1, w2, ...)`` means ``v * i >= w1**2 + w2**2 + ...`` with
``v, i >= 0``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    shape: tuple
    dims: tuple = ()

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=int)) if self.shape else 1

    def locate(self, offset: int) -> tuple:
        return tuple(int(i) for i in np.unravel_index(offset - self.start, self.shape)) if self.shape else ()


@dataclass(frozen=True)
class ConeBlock:
    name: str
    shape: tuple
    columns: np.ndarray  # (count, arity)


def _find(blocks, pos):
    blocks = [b for b in blocks if b.size]
    starts = [b.start for b in blocks]
    k = int(np.searchsorted(starts, pos, side="right")) - 1
    if k < 0 or pos >= blocks[k].start + blocks[k].size:
        raise IndexError(pos)
    return blocks[k]


@dataclass(eq=False)
class ConicProgram:
    lb: np.ndarray
    ub: np.ndarray
    binary: np.ndarray
    c: np.ndarray
    c0: float
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_le: sp.csr_matrix
    b_le: np.ndarray
    var_blocks: list
    eq_blocks: list
    le_blocks: list
    cones: list
    meta: dict = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.lb.size

    @property
    def n_binary(self) -> int:
        return int(self.binary.sum())

    @property
    def n_cones(self) -> int:
        return sum(cb.columns.shape[0] for cb in self.cones)

    def var(self, name: str) -> Block:
        for b in self.var_blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def columns(self, name: str) -> np.ndarray:
        b = self.var(name)
        return np.arange(b.start, b.start + b.size).reshape(b.shape)

    def describe_var(self, col: int) -> tuple:
        b = _find(self.var_blocks, col)
        return b.name, b.locate(col)

    def describe_row(self, kind: str, row: int) -> tuple:
        blocks = self.eq_blocks if kind == "eq" else self.le_blocks
        b = _find(blocks, row)
        return b.name, b.locate(row)

    def cone_columns(self) -> np.ndarray:
        """All rotated cones as one ``(count, arity)`` array (single arity assumed)."""
        arr = [cb.columns for cb in self.cones if cb.columns.size]
        return np.vstack(arr) if arr else np.zeros((0, 4), dtype=int)

    def objective(self, x) -> float:
        return float(self.c @ x + self.c0)

    def validate(self) -> None:
        if np.any(self.lb > self.ub):
            bad = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"empty bounds on {self.describe_var(bad)}")
        for cb in self.cones:
            heads = cb.columns[:, :2].ravel()
            if np.any(self.lb[heads] < 0):
                raise ValueError(f"cone block {cb.name}: head variables need nonnegative lower bounds")
        if self.binary.any():
            b = np.flatnonzero(self.binary)
            if np.any(self.lb[b] < 0) or np.any(self.ub[b] > 1):
                raise ValueError("binary variables must have bounds within [0, 1]")

    def with_bounds(self, lb=None, ub=None, binary=None) -> "ConicProgram":
        return ConicProgram(
            lb=self.lb if lb is None else np.asarray(lb, float),
            ub=self.ub if ub is None else np.asarray(ub, float),
            binary=self.binary if binary is None else np.asarray(binary, bool),
            c=self.c, c0=self.c0, A_eq=self.A_eq, b_eq=self.b_eq, A_le=self.A_le, b_le=self.b_le,
            var_blocks=self.var_blocks, eq_blocks=self.eq_blocks, le_blocks=self.le_blocks,
            cones=self.cones, meta=self.meta)


class ProgramBuilder:
    """Accumulates blocks; ``finish()`` returns the immutable-by-convention program."""

    def __init__(self):
        self._n = 0
        self._lb, self._ub, self._bin = [], [], []
        self._vblocks: list[Block] = []
        self._rows = {"eq": [], "le": []}
        self._nrows = {"eq": 0, "le": 0}
        self._rblocks = {"eq": [], "le": []}
        self._rhs = {"eq": [], "le": []}
        self._cones: list[ConeBlock] = []
        self._obj_cols, self._obj_vals = [], []
        self._c0 = 0.0

    def add_var(self, name, shape, lb=0.0, ub=np.inf, binary=False, dims=()) -> np.ndarray:
        shape = tuple(int(s) for s in np.atleast_1d(shape)) if np.ndim(shape) or shape != () else ()
        size = int(np.prod(shape, dtype=int)) if shape else 1
        self._vblocks.append(Block(name, self._n, shape, tuple(dims)))
        self._lb.append(np.broadcast_to(np.asarray(lb, float), shape).ravel().copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), shape).ravel().copy())
        self._bin.append(np.full(size, bool(binary)))
        cols = np.arange(self._n, self._n + size).reshape(shape)
        self._n += size
        return cols

    def add_rows(self, kind, name, shape, rows, cols, vals, rhs, dims=()) -> np.ndarray:
        """Add a row block; ``rows`` are flat local indices into ``shape``."""
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        size = int(np.prod(shape, dtype=int))
        start = self._nrows[kind]
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.broadcast_to(np.asarray(vals, float), rows.shape).ravel()
        if rows.size and (rows.min() < 0 or rows.max() >= size):
            raise ValueError(f"row block {name}: local row index out of range")
        self._rows[kind].append((rows + start, cols, vals))
        self._rhs[kind].append(np.broadcast_to(np.asarray(rhs, float), shape).ravel().copy())
        self._rblocks[kind].append(Block(name, start, shape, tuple(dims)))
        self._nrows[kind] += size
        return np.arange(start, start + size).reshape(shape)

    def add_cones(self, name, shape, columns) -> None:
        columns = np.asarray(columns, dtype=np.int64)
        self._cones.append(ConeBlock(name, tuple(np.atleast_1d(shape)), columns.reshape(-1, columns.shape[-1])))

    def add_objective(self, cols, vals) -> None:
        cols = np.asarray(cols, dtype=np.int64)
        self._obj_cols.append(cols.ravel())
        self._obj_vals.append(np.broadcast_to(np.asarray(vals, float), cols.shape).ravel())

    def add_constant(self, value: float) -> None:
        self._c0 += float(value)

    def fix(self, cols, value=0.0) -> None:
        cols = np.asarray(cols, dtype=np.int64).ravel()
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        lb[cols] = value
        ub[cols] = value
        self._lb, self._ub = [lb], [ub]

    def _matrix(self, kind):
        n = self._nrows[kind]
        if not self._rows[kind]:
            return sp.csr_matrix((n, self._n)), np.zeros(n)
        r = np.concatenate([t[0] for t in self._rows[kind]])
        c = np.concatenate([t[1] for t in self._rows[kind]])
        v = np.concatenate([t[2] for t in self._rows[kind]])
        M = sp.coo_matrix((v, (r, c)), shape=(n, self._n)).tocsr()
        M.sum_duplicates()
        M.eliminate_zeros()
        return M, np.concatenate(self._rhs[kind])

    def finish(self, meta=None) -> ConicProgram:
        A_eq, b_eq = self._matrix("eq")
        A_le, b_le = self._matrix("le")
        c = np.zeros(self._n)
        if self._obj_cols:
            np.add.at(c, np.concatenate(self._obj_cols), np.concatenate(self._obj_vals))
        prog = ConicProgram(
            lb=np.concatenate(self._lb) if self._lb else np.zeros(0),
            ub=np.concatenate(self._ub) if self._ub else np.zeros(0),
            binary=np.concatenate(self._bin) if self._bin else np.zeros(0, bool),
            c=c, c0=self._c0, A_eq=A_eq, b_eq=b_eq, A_le=A_le, b_le=b_le,
            var_blocks=list(self._vblocks), eq_blocks=list(self._rblocks["eq"]),
            le_blocks=list(self._rblocks["le"]), cones=list(self._cones), meta=dict(meta or {}))
        prog.validate()
        return prog


# ---------------------------------------------------------------------------
# text dump


def _fmt(v: float) -> str:
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _label(block: Block, pos: int) -> str:
    idx = block.locate(pos)
    return f"{block.name}[{','.join(map(str, idx))}]"


def dump_program(prog: ConicProgram) -> str:
    """Line-oriented text form; identical programs give identical text.

    Layout::

        CONICPROGRAM 1
        VARS <n>
        <col> <symbol[index]> <C|B> <lb> <ub>
        EQ <m>            (then LE <m>)
        <row> <label[index]> <rhs> | <col>:<coef> ...
        CONES <k>
        <block[index]> <v> <i> <w1> ...
        OBJ <constant>
        <col>:<coef> ...
    """
    out = io.StringIO()
    out.write("CONICPROGRAM 1\n")
    out.write(f"VARS {prog.n_vars}\n")
    for b in prog.var_blocks:
        for j in range(b.start, b.start + b.size):
            kind = "B" if prog.binary[j] else "C"
            out.write(f"{j} {_label(b, j)} {kind} {_fmt(prog.lb[j])} {_fmt(prog.ub[j])}\n")
    for kind, M, rhs, blocks in (("EQ", prog.A_eq, prog.b_eq, prog.eq_blocks),
                                 ("LE", prog.A_le, prog.b_le, prog.le_blocks)):
        M = M.tocsr()
        M.sort_indices()
        out.write(f"{kind} {M.shape[0]}\n")
        for b in blocks:
            for r in range(b.start, b.start + b.size):
                lo, hi = M.indptr[r], M.indptr[r + 1]
                terms = " ".join(f"{c}:{_fmt(v)}" for c, v in zip(M.indices[lo:hi], M.data[lo:hi]))
                out.write(f"{r} {_label(b, r)} {_fmt(rhs[r])} | {terms}\n")
    out.write(f"CONES {prog.n_cones}\n")
    for cb in prog.cones:
        for k, cols in enumerate(cb.columns):
            idx = np.unravel_index(k, cb.shape) if cb.shape else ()
            out.write(f"{cb.name}[{','.join(str(int(i)) for i in idx)}] {' '.join(map(str, cols))}\n")
    out.write(f"OBJ {_fmt(prog.c0)}\n")
    nz = np.flatnonzero(prog.c)
    out.write(" ".join(f"{j}:{_fmt(prog.c[j])}" for j in nz) + "\n")
    return out.getvalue()
