"""Lower a :class:`~evflex.program.ConicProgram` to the standard form

    minimize  c'x   subject to  A x = b,  G x + s = h,  s in K

with ``K`` = nonnegative orthant x second-order cones.  Fixed columns are
substituted out, finite bounds become orthant rows and every rotated cone
``v*i >= |w|^2`` becomes the standard cone ``(v+i, v-i, 2w) in Q``.
Rows and columns are equilibrated (modified Ruiz, uniform within each cone),
then rows are normalized to unit infinity-norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cones import ConeDims


class PresolveInfeasible(Exception):
    """A constraint that involves only fixed columns is violated."""


@dataclass(eq=False)
class StandardForm:
    c: np.ndarray
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    dims: ConeDims
    free: np.ndarray  # program column of each standard-form column
    x_fixed: np.ndarray  # full-length program vector with fixed values (0 elsewhere)
    c0: float
    obj_scale: float
    eq_rows: np.ndarray  # program eq row of each A row
    eq_scale: np.ndarray
    g_scale: np.ndarray
    g_origin: list  # (kind, first_row, count) blocks describing G rows
    n_program: int
    col_scale: np.ndarray | None = None  # x_free = col_scale * x_standard

    @property
    def n(self) -> int:
        return self.c.size

    def expand(self, x) -> np.ndarray:
        full = self.x_fixed.copy()
        full[self.free] = x if self.col_scale is None else self.col_scale * x
        return full


def _rownorm(M: sp.csr_matrix) -> np.ndarray:
    if M.shape[0] == 0:
        return np.zeros(0)
    out = np.zeros(M.shape[0])
    absd = np.abs(M.data)
    nz = np.diff(M.indptr) > 0
    out[nz] = np.maximum.reduceat(absd, M.indptr[:-1][nz]) if absd.size else 0.0
    return out


def to_standard(prog, lb=None, ub=None, tol: float = 1e-9, ruiz_iters: int = 15) -> StandardForm:
    """Standard form of ``prog`` with binaries relaxed to their bounds."""
    lb = prog.lb if lb is None else lb
    ub = prog.ub if ub is None else ub
    n = prog.n_vars
    fixed = lb == ub
    x_fixed = np.where(fixed, lb, 0.0)
    free = np.flatnonzero(~fixed)
    col_map = -np.ones(n, dtype=np.int64)
    col_map[free] = np.arange(free.size)

    c_full = prog.c
    c0 = prog.c0 + float(c_full[fixed] @ x_fixed[fixed])
    c = c_full[free]

    # equalities
    Aeq = prog.A_eq.tocsc()
    b = prog.b_eq - Aeq @ x_fixed
    A = Aeq[:, free].tocsr()
    keep = np.diff(A.indptr) > 0
    if np.any(np.abs(b[~keep]) > tol * (1 + np.abs(prog.b_eq[~keep]))):
        r = int(np.flatnonzero(~keep & (np.abs(b) > tol * (1 + np.abs(prog.b_eq))))[0])
        raise PresolveInfeasible(f"equality {prog.describe_row('eq', r)} violated by fixed columns")
    eq_rows = np.flatnonzero(keep)
    A, b = A[eq_rows], b[eq_rows]

    # linear inequalities
    Ale = prog.A_le.tocsc()
    hle = prog.b_le - Ale @ x_fixed
    Gle = Ale[:, free].tocsr()
    keep_le = np.diff(Gle.indptr) > 0
    if np.any(hle[~keep_le] < -tol * (1 + np.abs(prog.b_le[~keep_le]))):
        r = int(np.flatnonzero(~keep_le & (hle < -tol * (1 + np.abs(prog.b_le))))[0])
        raise PresolveInfeasible(f"inequality {prog.describe_row('le', r)} violated by fixed columns")
    le_rows = np.flatnonzero(keep_le)
    Gle, hle = Gle[le_rows], hle[le_rows]

    # bounds on free columns
    lbf, ubf = lb[free], ub[free]
    has_lb = np.flatnonzero(np.isfinite(lbf))
    has_ub = np.flatnonzero(np.isfinite(ubf))
    G_lb = sp.csr_matrix((-np.ones(has_lb.size), (np.arange(has_lb.size), has_lb)), shape=(has_lb.size, free.size))
    G_ub = sp.csr_matrix((np.ones(has_ub.size), (np.arange(has_ub.size), has_ub)), shape=(has_ub.size, free.size))
    h_lb, h_ub = -lbf[has_lb], ubf[has_ub]

    # cones, grouped by dimension
    cone_cols = [cb.columns for cb in prog.cones if cb.columns.size]
    soc_groups, G_soc, h_soc = [], [], []
    by_arity: dict[int, list] = {}
    for cols in cone_cols:
        by_arity.setdefault(cols.shape[1], []).append(cols)
    for arity in sorted(by_arity):
        cols = np.vstack(by_arity[arity])
        k = cols.shape[0]
        d = arity
        # rows: v+i, v-i, 2 w_j ; s = -M x  => G = M (sign folded below)
        rows, cc, vals = [], [], []
        base = np.arange(k) * d
        for col_idx, coef_rows in ((0, ((0, 1.0), (1, 1.0))), (1, ((0, 1.0), (1, -1.0)))):
            for r, v in coef_rows:
                rows.append(base + r), cc.append(cols[:, col_idx]), vals.append(np.full(k, v))
        for j in range(2, arity):
            rows.append(base + j), cc.append(cols[:, j]), vals.append(np.full(k, 2.0))
        rows = np.concatenate(rows)
        cc = np.concatenate(cc)
        vals = np.concatenate(vals)
        M = sp.csr_matrix((vals, (rows, cc)), shape=(k * d, n))
        # s = M x  =>  G x + s = h with G = -M[:, free], h = M[:, fixed] x_fixed
        hq = M @ x_fixed
        Gq = -M.tocsc()[:, free].tocsr()
        # cones with every column fixed are dropped after a membership check
        nnz_cone = np.add.reduceat(np.diff(Gq.indptr), base) if k else np.zeros(0)
        empty = np.flatnonzero(nnz_cone == 0)
        if empty.size:
            H = hq.reshape(k, d)[empty]
            if np.any(H[:, 0] < np.linalg.norm(H[:, 1:], axis=1) - tol):
                raise PresolveInfeasible("a cone over fixed columns is violated")
            live = np.setdiff1d(np.arange(k), empty)
            rows_live = (live[:, None] * d + np.arange(d)).ravel()
            Gq, hq = Gq[rows_live], hq[rows_live]
            k = live.size
        if k:
            soc_groups.append((d, k))
            G_soc.append(Gq)
            h_soc.append(hq)

    G = sp.vstack([Gle, G_lb, G_ub] + G_soc, format="csr")
    h = np.concatenate([hle, h_lb, h_ub] + h_soc)
    l = Gle.shape[0] + has_lb.size + has_ub.size
    dims = ConeDims(l, tuple(soc_groups))

    # modified Ruiz equilibration of [A; G]: columns scale freely, rows within a cone share a factor
    col_scale = np.ones(free.size)
    M = sp.vstack([A, G], format="csr")
    p_eq = A.shape[0]
    for _ in range(ruiz_iters if free.size else 0):
        rn = _rownorm(M)
        rn[rn == 0] = 1.0
        rc = rn[p_eq:]
        for off, d, k in dims.groups():
            blk = rc[off:off + d * k].reshape(k, d)
            blk[:] = blk.max(axis=1, keepdims=True)
        cn = _rownorm(M.T.tocsr())
        cn[cn == 0] = 1.0
        dr = np.clip(1.0 / np.sqrt(rn), 1e-4, 1e4)
        dc = np.clip(1.0 / np.sqrt(cn), 1e-4, 1e4)
        if np.max(np.abs(np.log(rn))) < 0.1 and np.max(np.abs(np.log(cn))) < 0.1:
            break
        M = (sp.diags(dr) @ M @ sp.diags(dc)).tocsr()
        col_scale *= dc
    A = (A @ sp.diags(col_scale)).tocsr()
    G = (G @ sp.diags(col_scale)).tocsr()
    c = c * col_scale

    ra = _rownorm(A)
    ra[ra == 0] = 1.0
    eq_scale = 1.0 / ra
    rg = _rownorm(G)
    rg[rg == 0] = 1.0
    for off, d, k in dims.groups():
        blk = rg[off:off + d * k].reshape(k, d)
        blk[:] = blk.max(axis=1, keepdims=True)
    g_scale = 1.0 / rg
    A = sp.diags(eq_scale) @ A
    b = b * eq_scale
    G = sp.diags(g_scale) @ G
    h = h * g_scale
    cmax = float(np.max(np.abs(c))) if c.size else 0.0
    obj_scale = cmax if cmax > 0 else 1.0
    c = c / obj_scale

    origin = [("le", 0, Gle.shape[0]), ("lb", Gle.shape[0], has_lb.size),
              ("ub", Gle.shape[0] + has_lb.size, has_ub.size), ("soc", l, dims.m - l)]
    return StandardForm(
        c=c, A=A.tocsr(), b=b, G=G.tocsr(), h=h, dims=dims, free=free, x_fixed=x_fixed, c0=c0,
        obj_scale=obj_scale, eq_rows=eq_rows, eq_scale=eq_scale, g_scale=g_scale, g_origin=origin,
        n_program=n, col_scale=col_scale)
