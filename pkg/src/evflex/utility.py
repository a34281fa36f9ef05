"""Lower-semicontinuous piecewise-linear compensation curves for energy not served.

A curve has breakpoints ``alpha[0] = 0 < alpha[1] < ... < alpha[K]`` (kWh) and
one affine piece ``h[k] * phi + b[k]`` per interval ``(alpha[k-1], alpha[k]]``.
The value at ``phi = 0`` is always zero, so a positive ``b[0]`` is a fixed
charge for any curtailment at all.

The mixed-integer encoding works with two weights per interval endpoint and
one binary per piece; see :func:`encode_utility`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class UtilityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class UtilityFunction:
    alpha: np.ndarray  # (K+1,) kWh, alpha[0] == 0
    h: np.ndarray  # (K,) currency/kWh
    b: np.ndarray  # (K,) currency
    name: str = ""

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        h = np.asarray(self.h, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if h.ndim != 1 or h.size < 1:
            raise UtilityError("need at least one segment")
        if alpha.shape != (h.size + 1,) or b.shape != h.shape:
            raise UtilityError("alpha must have one more entry than h and b")
        if alpha[0] != 0.0:
            raise UtilityError("first breakpoint must be 0")
        if np.any(np.diff(alpha) <= 0):
            raise UtilityError("breakpoints must be strictly increasing")
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(h)) and np.all(np.isfinite(b))):
            raise UtilityError("non-finite utility coefficients")
        for nm, v in (("alpha", alpha), ("h", h), ("b", b)):
            v.setflags(write=False)
            object.__setattr__(self, nm, v)
        if self.kappa == 1 and h[0] == 0 and b[0] == 0:
            warnings.warn(f"utility {self.name!r} is identically zero: curtailment is free", stacklevel=2)

    @property
    def kappa(self) -> int:
        return self.h.size

    @property
    def u_left(self) -> np.ndarray:
        """Value of piece k at its left end, ``f_k(alpha[k-1])``."""
        return self.h * self.alpha[:-1] + self.b

    @property
    def u_right(self) -> np.ndarray:
        """Value of piece k at its right end, ``f_k(alpha[k])``."""
        return self.h * self.alpha[1:] + self.b

    @property
    def domain_max(self) -> float:
        return float(self.alpha[-1])

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.tolist(), "h": self.h.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, d: dict, name: str = "") -> "UtilityFunction":
        return cls(np.asarray(d["alpha"], float), np.asarray(d["h"], float), np.asarray(d["b"], float), name)


def segment_of(u: UtilityFunction, phi: float) -> int:
    """Piece index (1-based) owning ``phi``; 0 for ``phi == 0``."""
    if phi < 0 or phi > u.domain_max:
        raise UtilityError(f"energy not served {phi} outside [0, {u.domain_max}]")
    if phi == 0:
        return 0
    return int(np.searchsorted(u.alpha, phi, side="left"))


def evaluate_utility(u: UtilityFunction, phi: float) -> float:
    k = segment_of(u, phi)
    if k == 0:
        return 0.0
    return float(u.h[k - 1] * phi + u.b[k - 1])


def encoding_minimum(u: UtilityFunction, phi: float, tol: float = 0.0) -> float:
    """Smallest cost any point of the mixed-integer encoding can attain at ``phi``.

    Enumerates the pieces whose closed interval contains ``phi`` (plus the
    zero point); this is the reference the encoding is checked against.
    """
    if phi < -tol or phi > u.domain_max + tol:
        raise UtilityError(f"energy not served {phi} outside [0, {u.domain_max}]")
    best = 0.0 if abs(phi) <= tol else np.inf
    for k in range(u.kappa):
        if u.alpha[k] - tol <= phi <= u.alpha[k + 1] + tol:
            best = min(best, float(u.h[k] * phi + u.b[k]))
    return best


def is_convex_shortcut_eligible(u: UtilityFunction, tol: float = 1e-12) -> bool:
    """True when the convex hull of the encoding already reproduces the curve.

    That needs continuity everywhere (including at 0), nondecreasing slopes and
    a nondecreasing curve; then the binaries can be relaxed.
    """
    if abs(u.b[0]) > tol:
        return False
    jumps = u.u_left[1:] - u.u_right[:-1]
    if np.any(np.abs(jumps) > tol * max(1.0, float(np.max(np.abs(u.u_right))))):
        return False
    if np.any(np.diff(u.h) < -tol):
        return False
    return bool(np.all(u.h >= -tol))


@dataclass(frozen=True)
class UtilityEncoding:
    """Linear rows of the endpoint-weight encoding for one (pool, scenario).

    Columns are local: ``lam_lo[0..K]`` (weight on ``f_k`` at ``alpha[k]`` seen
    from the left piece, with ``lam_lo[0]`` the zero point), ``lam_hi[0..K-1]``
    (weight on ``f_{k+1}`` at ``alpha[k]``), ``y[1..K]``, then ``Z`` and ``Phi``.
    ``eq_matrix @ v == eq_rhs`` and ``le_matrix @ v <= le_rhs``.
    """

    kappa: int
    n_vars: int
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    y: np.ndarray
    z: int
    phi: int
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    eq_labels: tuple
    le_matrix: np.ndarray
    le_rhs: np.ndarray
    le_labels: tuple


def encode_utility(u: UtilityFunction) -> UtilityEncoding:
    K = u.kappa
    lam_lo = np.arange(0, K + 1)
    lam_hi = np.arange(K + 1, 2 * K + 1)
    y = np.arange(2 * K + 1, 3 * K + 1)
    z, phi = 3 * K + 1, 3 * K + 2
    nv = 3 * K + 3
    # endpoint costs: lower weight at k uses u_right of piece k (0 at k=0),
    # upper weight at k uses u_left of piece k+1
    cost_lo = np.concatenate([[0.0], u.u_right])
    cost_hi = u.u_left

    rows, rhs, labels = [], [], []
    r = np.zeros(nv)  # cost definition
    r[lam_lo] = cost_lo
    r[lam_hi] = cost_hi
    r[z] = -1.0
    rows.append(r), rhs.append(0.0), labels.append("cost")
    r = np.zeros(nv)  # energy not served as a weighted breakpoint
    r[lam_lo] = u.alpha
    r[lam_hi] = u.alpha[:-1]
    r[phi] = -1.0
    rows.append(r), rhs.append(0.0), labels.append("energy")
    r = np.zeros(nv)  # weights sum to one
    r[lam_lo] = 1.0
    r[lam_hi] = 1.0
    rows.append(r), rhs.append(1.0), labels.append("convexity")
    for k in range(K):  # both endpoint weights of piece k+1 tied to its binary
        r = np.zeros(nv)
        r[lam_hi[k]] = 1.0
        r[lam_lo[k + 1]] = 1.0
        r[y[k]] = -1.0
        rows.append(r), rhs.append(0.0), labels.append(f"link[{k + 1}]")
    le = np.zeros((1, nv))
    le[0, y] = 1.0
    return UtilityEncoding(
        kappa=K, n_vars=nv, lam_lo=lam_lo, lam_hi=lam_hi, y=y, z=z, phi=phi,
        eq_matrix=np.array(rows), eq_rhs=np.array(rhs), eq_labels=tuple(labels),
        le_matrix=le, le_rhs=np.array([1.0]), le_labels=("one-piece",),
    )
