"""Vectorized algebra on a product of a nonnegative orthant and second-order cones.

Vectors are laid out as ``[orthant (l) | soc group 1 | soc group 2 | ...]``;
every group holds ``count`` cones of one dimension stored cone-major, so a
group slice reshapes to ``(count, dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConeDims:
    l: int
    soc: tuple  # ((dim, count), ...)

    @property
    def m(self) -> int:
        return self.l + sum(d * c for d, c in self.soc)

    @property
    def degree(self) -> int:
        return self.l + sum(c for _, c in self.soc)

    def groups(self):
        """Yield ``(offset, dim, count)`` for every SOC group."""
        off = self.l
        for d, c in self.soc:
            yield off, d, c
            off += d * c


def _view(u, off, d, c):
    return u[off:off + d * c].reshape(c, d)


def unit(dims: ConeDims) -> np.ndarray:
    e = np.zeros(dims.m)
    e[: dims.l] = 1.0
    for off, d, c in dims.groups():
        _view(e, off, d, c)[:, 0] = 1.0
    return e


def jdet(U: np.ndarray) -> np.ndarray:
    # factored form avoids cancellation near the cone boundary
    r = np.linalg.norm(U[:, 1:], axis=1)
    return (U[:, 0] - r) * (U[:, 0] + r)


def pair_products(dims: ConeDims, s, z) -> np.ndarray:
    """Per-block complementarity ``s_i z_i`` (orthant) and ``sqrt(det s det z)`` (cones)."""
    out = [s[: dims.l] * z[: dims.l]]
    for off, d, c in dims.groups():
        out.append(np.sqrt(np.maximum(jdet(_view(s, off, d, c)), 0.0) * np.maximum(jdet(_view(z, off, d, c)), 0.0)))
    return np.concatenate(out)


def jordan_prod(dims: ConeDims, u, v) -> np.ndarray:
    out = np.empty(dims.m)
    out[: dims.l] = u[: dims.l] * v[: dims.l]
    for off, d, c in dims.groups():
        U, V, O = _view(u, off, d, c), _view(v, off, d, c), _view(out, off, d, c)
        O[:, 0] = np.einsum("ij,ij->i", U, V)
        O[:, 1:] = U[:, :1] * V[:, 1:] + V[:, :1] * U[:, 1:]
    return out


def jordan_div(dims: ConeDims, lam, r) -> np.ndarray:
    """Solve ``lam o x = r`` for x (lam in the cone interior)."""
    out = np.empty(dims.m)
    out[: dims.l] = r[: dims.l] / lam[: dims.l]
    for off, d, c in dims.groups():
        L, R, O = _view(lam, off, d, c), _view(r, off, d, c), _view(out, off, d, c)
        det = jdet(L)
        x0 = (L[:, 0] * R[:, 0] - np.einsum("ij,ij->i", L[:, 1:], R[:, 1:])) / det
        O[:, 0] = x0
        O[:, 1:] = (R[:, 1:] - x0[:, None] * L[:, 1:]) / L[:, :1]
    return out


def violation(dims: ConeDims, u) -> float:
    """Smallest ``a`` with ``u + a e`` in the (closed) cone."""
    worst = -np.inf
    if dims.l:
        worst = max(worst, float(np.max(-u[: dims.l])))
    for off, d, c in dims.groups():
        U = _view(u, off, d, c)
        worst = max(worst, float(np.max(np.linalg.norm(U[:, 1:], axis=1) - U[:, 0])))
    return worst


def shift_into_cone(dims: ConeDims, u) -> np.ndarray:
    a = violation(dims, u)
    if a < 0:
        return u.copy()
    return u + (1.0 + a) * unit(dims)


def max_step(dims: ConeDims, u, du) -> float:
    """Largest alpha keeping ``u + alpha du`` in the cone (u interior); inf if unbounded."""
    alpha = np.inf
    if dims.l:
        neg = du[: dims.l] < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-u[: dims.l][neg] / du[: dims.l][neg])))
    for off, d, c in dims.groups():
        U, D = _view(u, off, d, c), _view(du, off, d, c)
        a = jdet(D)
        b = U[:, 0] * D[:, 0] - np.einsum("ij,ij->i", U[:, 1:], D[:, 1:])
        cc = jdet(U)
        disc = b * b - a * cc
        hit = (disc >= 0) & ((a < 0) | (b < 0))
        if np.any(hit):
            root = cc[hit] / (-b[hit] + np.sqrt(disc[hit]))
            alpha = min(alpha, float(np.min(root)))
    return alpha


@dataclass
class NTScaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lam`` (W symmetric)."""

    dims: ConeDims
    w_orth: np.ndarray  # sqrt(s/z)
    eta: list  # per group, (count,)
    wbar: list  # per group, (count, dim), J-normalized
    lam: np.ndarray

    def _block(self, g, inverse=False):
        wb, eta = self.wbar[g], self.eta[g]
        c, d = wb.shape
        M = np.empty((c, d, d))
        w0, w1 = wb[:, 0], wb[:, 1:]
        sgn = -1.0 if inverse else 1.0
        M[:, 0, 0] = w0
        M[:, 0, 1:] = sgn * w1
        M[:, 1:, 0] = sgn * w1
        M[:, 1:, 1:] = np.eye(d - 1)[None] + w1[:, :, None] * w1[:, None, :] / (1.0 + w0)[:, None, None]
        scale = 1.0 / eta if inverse else eta
        return M * scale[:, None, None]

    def apply(self, v, inverse=False) -> np.ndarray:
        out = np.empty_like(v)
        wl = self.w_orth
        out[: self.dims.l] = v[: self.dims.l] / wl if inverse else v[: self.dims.l] * wl
        for g, (off, d, c) in enumerate(self.dims.groups()):
            wb, eta = self.wbar[g], self.eta[g]
            V = _view(v, off, d, c)
            w0, w1 = wb[:, 0], wb[:, 1:]
            sgn = -1.0 if inverse else 1.0
            dot = np.einsum("ij,ij->i", w1, V[:, 1:])
            o0 = w0 * V[:, 0] + sgn * dot
            o1 = V[:, 1:] + (sgn * V[:, :1] + (dot / (1.0 + w0))[:, None]) * w1
            scale = (1.0 / eta) if inverse else eta
            O = _view(out, off, d, c)
            O[:, 0] = o0 * scale
            O[:, 1:] = o1 * scale[:, None]
        return out


def nt_scaling(dims: ConeDims, s, z) -> NTScaling:
    l = dims.l
    w_orth = np.sqrt(s[:l] / z[:l])
    lam = np.empty(dims.m)
    lam[:l] = np.sqrt(s[:l] * z[:l])
    etas, wbars = [], []
    for off, d, c in dims.groups():
        S, Z = _view(s, off, d, c), _view(z, off, d, c)
        sres, zres = np.sqrt(jdet(S)), np.sqrt(jdet(Z))
        sb, zb = S / sres[:, None], Z / zres[:, None]
        gamma = np.sqrt(0.5 * (1.0 + np.einsum("ij,ij->i", sb, zb)))
        wb = np.empty_like(sb)
        wb[:, 0] = (sb[:, 0] + zb[:, 0]) / (2 * gamma)
        wb[:, 1:] = (sb[:, 1:] - zb[:, 1:]) / (2 * gamma)[:, None]
        etas.append(np.sqrt(sres / zres))
        wbars.append(wb)
    scal = NTScaling(dims, w_orth, etas, wbars, lam)
    # lam = W z; written out so the cone part uses the same formula as apply()
    lam_cone = scal.apply(z)
    lam[l:] = lam_cone[l:]
    return scal
