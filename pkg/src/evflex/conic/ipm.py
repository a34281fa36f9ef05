"""Primal-dual interior-point method for linear/second-order cone programs.

The iteration works on the homogeneous self-dual embedding

    [ 0 ]   [  0   A'  G'  c ] [x]   [0]
    [ 0 ] = [ -A   0   0   b ] [y] - [0]
    [ 0 ]   [ -G   0   0   h ] [z]   [s]
    [ 0 ]   [ -c' -b' -h'  0 ] [t]   [k]

with Nesterov-Todd scaling and a Mehrotra predictor-corrector step.  Each
Newton system is solved in its quasi-definite augmented form

    [ d I   A'     G'        ] [dx]   [r_x]
    [ A    -d I    0         ] [dy] = [r_y]
    [ G     0    -(W^2 + d I)] [dz]   [r_z]

with a fixed sparsity pattern, factorized as LDL' (qdldl, AMD ordering fixed
at the first factorization) and refined against the unregularized matrix.
Steps are shortened until every cone block keeps a share of the mean
complementarity.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import qdldl
import scipy.sparse as sp

from . import cones as K
from .standard import StandardForm

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8  # absolute and relative duality gap
    max_iter: int = 200
    bb_abs_gap: float = 1e-6
    bb_rel_gap: float = 1e-4
    node_limit: int = 10_000
    heuristic_only: bool = False
    exact_binary_cap: int = 64
    time_limit: float | None = None
    int_tol: float = 1e-6
    static_reg: float = 1e-8
    refine_steps: int = 4
    refine_tol: float = 1e-12  # stop refining once the scaled KKT residual is this small
    step_factor: float = 0.99
    centrality: float = 1e-4  # min block complementarity as a share of the mean after a step

    def __post_init__(self):
        for nm in ("feas_tol", "gap_tol", "bb_abs_gap", "bb_rel_gap", "int_tol", "static_reg", "refine_tol"):
            if not getattr(self, nm) > 0:
                raise ValueError(f"{nm} must be positive")
        if self.max_iter < 1 or self.node_limit < 1:
            raise ValueError("iteration and node limits must be positive")


@dataclass
class IPMResult:
    status: str  # optimal | optimal_inaccurate | infeasible | unbounded | iteration_limit | time_limit | numerical
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    s: np.ndarray
    pcost: float
    dcost: float
    iterations: int
    pres: float
    dres: float
    gap: float
    history: list = field(default_factory=list)


class AugmentedKKT:
    """Fixed-pattern upper-triangular quasi-definite KKT matrix and its LDL' factorization."""

    def __init__(self, A: sp.csr_matrix, G: sp.csr_matrix, dims: K.ConeDims, reg: float):
        self.n, self.p, self.m = G.shape[1], A.shape[0], G.shape[0]
        n, p = self.n, self.p
        self.N = N = n + p + self.m
        self.dims = dims
        self.reg = reg
        self.A, self.G = A, G
        self.At, self.Gt = A.T.tocsr(), G.T.tocsr()
        diag = np.arange(N, dtype=np.int64) * (N + 1)
        Ac, Gc = A.tocoo(), G.tocoo()
        a_keys = (n + Ac.row.astype(np.int64)) * N + Ac.col
        g_keys = (n + p + Gc.row.astype(np.int64)) * N + Gc.col
        # off-diagonal upper entries of the dense W^2 block of every cone
        self._cone_idx = []
        c_keys = []
        for off, d, cnt in dims.groups():
            i, j = np.triu_indices(d, 1)
            g0 = n + p + off + np.arange(cnt, dtype=np.int64)[:, None] * d
            c_keys.append(((g0 + j) * N + (g0 + i)).ravel())
            self._cone_idx.append((i, j))
        keys = np.concatenate([diag, a_keys, g_keys] + c_keys)
        uniq = np.unique(keys)
        self.nnz = uniq.size
        cols, rows = uniq // N, uniq % N
        counts = np.bincount(cols, minlength=N)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.indices = rows
        pos = lambda k: np.searchsorted(uniq, k)  # noqa: E731
        self.diag_pos = pos(diag)
        self.base = np.zeros(self.nnz)
        self.base[pos(a_keys)] += Ac.data
        self.base[pos(g_keys)] += Gc.data
        self.c_pos = [pos(k) for k in c_keys]
        self.reg_vec = np.concatenate([np.full(n, reg), np.full(p + self.m, -reg)])
        self._solver = None
        self._scal = None
        self.last_error = 0.0

    def factor(self, scal: K.NTScaling) -> None:
        n, p, l = self.n, self.p, self.dims.l
        data = self.base.copy()
        data[self.diag_pos[n + p: n + p + l]] -= scal.w_orth**2
        for g, ((off, d, cnt), (i, j), cpos) in enumerate(zip(self.dims.groups(), self._cone_idx, self.c_pos)):
            W = scal._block(g)
            W2 = np.einsum("kij,kjl->kil", W, W)
            dg = n + p + off + np.arange(cnt)[:, None] * d + np.arange(d)
            data[self.diag_pos[dg.ravel()]] -= np.einsum("kii->ki", W2).ravel()
            data[cpos] -= W2[:, i, j].ravel()
        data[self.diag_pos] += self.reg_vec
        U = sp.csc_matrix((data, self.indices, self.indptr), shape=(self.N, self.N))
        if self._solver is None:
            self._solver = qdldl.Solver(U, upper=True)
        else:
            self._solver.update(U, upper=True)
        self._scal = scal

    def _raw(self, rx, ry, rz):
        n, p = self.n, self.p
        sol = self._solver.solve(np.concatenate([rx, ry, rz]))
        return sol[:n], sol[n: n + p], sol[n + p:]

    def solve(self, rx, ry, rz, refine: int = 10, tol: float = 1e-15):
        """Solve ``[0 A' G'; A 0 0; G 0 -W^2] (dx, dy, dz) = (rx, ry, rz)``.

        Iterative refinement runs on the unregularized system; each block's
        residual is measured against its own right-hand side, the cone block
        in the ``W^-1`` metric.
        """
        scal = self._scal
        dx, dy, dz = self._raw(rx, ry, rz)
        sx, sy, sz = 1.0 + _inf(rx), 1.0 + _inf(ry), 1.0 + _inf(scal.apply(rz, inverse=True))
        prev = np.inf
        for k in range(refine + 1):
            ex = rx - self.At @ dy - self.Gt @ dz
            ey = ry - self.A @ dx
            ez = rz - self.G @ dx + scal.apply(scal.apply(dz))
            err = max(_inf(ex) / sx, _inf(ey) / sy, _inf(scal.apply(ez, inverse=True)) / sz)
            if err > 0.5 * prev:  # stalled or diverging: undo the last correction
                dx, dy, dz = dx - cx, dy - cy, dz - cz
                err = prev
                break
            if err <= tol or k == refine:
                break
            prev = err
            cx, cy, cz = self._raw(ex, ey, ez)
            dx, dy, dz = dx + cx, dy + cy, dz + cz
        self.last_error = err
        return dx, dy, dz


def _identity_scaling(dims: K.ConeDims) -> K.NTScaling:
    wb = [np.tile(np.eye(1, d).ravel(), (c, 1)) for _, d, c in dims.groups()]
    return K.NTScaling(dims, np.ones(dims.l), [np.ones(c) for _, _, c in dims.groups()], wb, K.unit(dims))


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


# non-finite directions are caught below and end the run on the best iterate
@np.errstate(divide="ignore", invalid="ignore")
def solve_standard(sf: StandardForm, opts: SolverOptions | None = None) -> IPMResult:
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    c, A, b, G, h, dims = sf.c, sf.A, sf.b, sf.G, sf.h, sf.dims
    n, p, m = c.size, b.size, h.size
    kkt = AugmentedKKT(A, G, dims, opts.static_reg)
    At, Gt = kkt.At, kkt.Gt
    D = dims.degree

    # starting point: least-squares primal and dual, shifted into the cone
    kkt.factor(_identity_scaling(dims))
    xh, _, zh = kkt.solve(np.zeros(n), b, h, opts.refine_steps, opts.refine_tol)
    x = xh
    s = K.shift_into_cone(dims, -zh)
    _, y, zd = kkt.solve(-c, np.zeros(p), np.zeros(m), opts.refine_steps, opts.refine_tol)
    z = K.shift_into_cone(dims, zd)
    tau = kappa = 1.0

    nb = 1.0 + max(_inf(b), _inf(h))
    nc = 1.0 + _inf(c)
    history = []
    status = "iteration_limit"
    it = 0
    best = None

    for it in range(opts.max_iter + 1):
        rx = At @ y + Gt @ z + c * tau
        ry = -(A @ x) + b * tau
        rz = -(G @ x) + h * tau - s
        cx, by, hz = float(c @ x), float(b @ y), float(h @ z)
        rt = -cx - by - hz - kappa
        sz = float(s @ z)
        mu = (sz + tau * kappa) / (D + 1)

        pres = max(_inf(ry), _inf(rz)) / tau / nb
        dres = _inf(rx) / tau / nc
        pcost, dcost = cx / tau, -(by + hz) / tau
        gap = sz / tau**2
        if pcost < 0:
            relgap = gap / -pcost
        elif dcost > 0:
            relgap = gap / dcost
        else:
            relgap = np.inf
        history.append(dict(iter=it, pcost=pcost, dcost=dcost, pres=pres, dres=dres, gap=gap,
                            tau=tau, kappa=kappa, mu=mu))
        if not np.isfinite(pres + dres + gap):
            status = "numerical"
            break
        if pres <= opts.feas_tol and dres <= opts.feas_tol and (gap <= opts.gap_tol or relgap <= opts.gap_tol):
            status = "optimal"
            break
        # infeasibility certificates (only meaningful once kappa dominates tau)
        if kappa > tau:
            if by + hz < 0 and _inf(At @ y + Gt @ z) / -(by + hz) <= opts.feas_tol:
                status = "infeasible"
                break
            if cx < 0 and max(_inf(A @ x), _inf(G @ x + s)) / -cx <= opts.feas_tol:
                status = "unbounded"
                break
        if best is None or max(pres, dres, min(gap, relgap)) < best[0]:
            best = (max(pres, dres, min(gap, relgap)), x.copy(), y.copy(), z.copy(), s.copy(), tau, it)
        if it == opts.max_iter:
            break
        if opts.time_limit is not None and time.perf_counter() - t0 > opts.time_limit:
            status = "time_limit"
            break

        scal = K.nt_scaling(dims, s, z)
        lam = scal.lam
        kkt.factor(scal)
        x1, y1, z1 = kkt.solve(-c, b, h, opts.refine_steps, opts.refine_tol)
        den_base = kappa / tau - float(c @ x1) - float(b @ y1) - float(h @ z1)

        def direction(sigma, corr_s, corr_t):
            target = sigma * mu * K.unit(dims) - K.jordan_prod(dims, lam, lam) - corr_s
            q = K.jordan_div(dims, lam, target)
            Wq = scal.apply(q)
            x2, y2, z2 = kkt.solve(-(1 - sigma) * rx, (1 - sigma) * ry, (1 - sigma) * rz - Wq, opts.refine_steps, opts.refine_tol)
            num = (-(1 - sigma) * rt + (sigma * mu - tau * kappa - corr_t) / tau
                   + float(c @ x2) + float(b @ y2) + float(h @ z2))
            dtau = num / den_base
            dx, dy, dz = x2 + dtau * x1, y2 + dtau * y1, z2 + dtau * z1
            dzs = scal.apply(dz)  # W dz
            dss = q - dzs  # W^-1 ds
            ds = scal.apply(dss)
            dkappa = (sigma * mu - tau * kappa - corr_t - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa, dss, dzs

        def steplen(dss, dzs, dtau, dkappa):
            a = min(K.max_step(dims, lam, dss), K.max_step(dims, lam, dzs))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        # predictor
        _, _, _, _, dtau_a, dkap_a, dss_a, dzs_a = direction(0.0, np.zeros(m), 0.0)
        alpha_a = min(1.0, steplen(dss_a, dzs_a, dtau_a, dkap_a))
        sigma = min(1.0, max(0.0, (1.0 - alpha_a)) ** 3)
        # corrector
        corr_s = K.jordan_prod(dims, dss_a, dzs_a)
        corr_t = dtau_a * dkap_a
        dx, dy, dz, ds, dtau, dkappa, dss, dzs = direction(sigma, corr_s, corr_t)
        alpha = min(1.0, opts.step_factor * steplen(dss, dzs, dtau, dkappa))
        # backtrack until every block keeps a share of the average complementarity; a start that is
        # already off-centre only has to not get much worse
        cur = min(float(np.min(K.pair_products(dims, s, z), initial=np.inf)), tau * kappa) / mu
        need = min(opts.centrality, 0.5 * cur)
        for _ in range(30):
            if not np.isfinite(alpha) or alpha < 1e-12:
                break
            sn, zn = s + alpha * ds, z + alpha * dz
            tn, kn = tau + alpha * dtau, kappa + alpha * dkappa
            mun = (float(sn @ zn) + tn * kn) / (D + 1)
            if min(float(np.min(K.pair_products(dims, sn, zn), initial=np.inf)), tn * kn) >= need * mun:
                break
            alpha *= 0.8
        if not np.isfinite(alpha) or alpha < 1e-12:
            log.debug("step failure: alpha=%r alpha_aff=%r sigma=%r", alpha, alpha_a, sigma)
            status = "numerical"
            break
        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        log.debug("it %3d pcost %+.6e dcost %+.6e pres %.1e dres %.1e gap %.1e a %.3f kkt %.1e", it, pcost,
                  dcost, pres, dres, gap, alpha, kkt.last_error)

    if status in ("numerical", "iteration_limit", "time_limit") and best is not None:
        score, x, y, z, s, tau, _ = best
        if score <= 1e3 * max(opts.feas_tol, opts.gap_tol):
            status = "optimal_inaccurate"
        h_last = history[best[6]]
        pres, dres, gap = h_last["pres"], h_last["dres"], h_last["gap"]
        pcost, dcost = h_last["pcost"], h_last["dcost"]
    if status in ("infeasible",):
        return IPMResult(status, x, y, z, s, np.nan, np.nan, it, pres, dres, gap, history)
    if status == "unbounded":
        return IPMResult(status, x, y, z, s, -np.inf, -np.inf, it, pres, dres, gap, history)
    return IPMResult(status, x / tau, y / tau, z / tau, s / tau, pcost, dcost, it, pres, dres, gap, history)


# ---------------------------------------------------------------------------
# program-level interface


@dataclass
class SolveReport:
    status: str
    primal_objective: float
    dual_objective: float
    iterations: int
    nodes: int = 0
    bound_gap: float = 0.0
    best_bound: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    cone_residual: float = float("nan")  # worst v*i - |w|^2 shortfall over rotated cones
    solve_time: float = 0.0
    mode: str = "continuous"
    message: str = ""
    incumbents: list = field(default_factory=list)  # B&B incumbent values in discovery order

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "optimal_inaccurate", "gap_limit")

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if isinstance(v, float) and not np.isfinite(v):
                v = None if np.isnan(v) else ("inf" if v > 0 else "-inf")
            out[k] = v
        return out


class SolverError(RuntimeError):
    def __init__(self, report: SolveReport):
        super().__init__(f"solver status {report.status}: {report.message}")
        self.report = report


def cone_shortfall(prog, x) -> float:
    cols = [cb.columns for cb in prog.cones if cb.columns.size]
    if not cols:
        return 0.0
    worst = 0.0
    for C in cols:
        lhs = x[C[:, 0]] * x[C[:, 1]]
        rhs = np.sum(x[C[:, 2:]] ** 2, axis=1)
        worst = max(worst, float(np.max(rhs - lhs)))
    return worst


def solve_socp(prog, opts: SolverOptions | None = None, lb=None, ub=None, relax: bool = False):
    """Solve a continuous program (binaries must be fixed unless ``relax``).

    Returns ``(x, report)`` with ``x`` indexed like the program columns; ``x``
    is ``None`` when no usable point was found.
    """
    from .standard import PresolveInfeasible, to_standard

    opts = opts or SolverOptions()
    lb = prog.lb if lb is None else lb
    ub = prog.ub if ub is None else ub
    if not relax and np.any(prog.binary & (lb < ub)):
        raise ValueError("program has free binaries; use solve_misocp or relax=True")
    t0 = time.perf_counter()
    try:
        sf = to_standard(prog, lb, ub)
    except PresolveInfeasible as exc:
        return None, SolveReport("infeasible", np.nan, np.nan, 0, message=str(exc))
    if sf.n == 0:
        x = sf.expand(np.zeros(0))
        obj = prog.objective(x)
        return x, SolveReport("optimal", obj, obj, 0, primal_residual=0.0, dual_residual=0.0,
                              cone_residual=cone_shortfall(prog, x), solve_time=time.perf_counter() - t0)
    res = solve_standard(sf, opts)
    rep = SolveReport(res.status, np.nan, np.nan, res.iterations, primal_residual=res.pres,
                      dual_residual=res.dres, solve_time=time.perf_counter() - t0)
    if res.status not in ("optimal", "optimal_inaccurate"):
        rep.message = {"infeasible": "primal infeasibility certificate",
                       "unbounded": "dual infeasibility certificate"}.get(res.status, "no converged point")
        return None, rep
    x = sf.expand(res.x)
    rep.primal_objective = prog.objective(x)
    rep.dual_objective = res.dcost * sf.obj_scale + sf.c0
    rep.cone_residual = cone_shortfall(prog, x)
    return x, rep
