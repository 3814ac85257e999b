"""Monotone quantile-function basis: piecewise pieces of a parametric base
quantile function, tiling (0,1) between knots.

The basis consists of a constant function plus M-1 monotone pieces of the
base quantile function q0 (standard normal or standard Student-t).  Piece m
(m >= 2) is flat outside its active knot interval, so exactly one piece is
changing at any quantile level.  Any nonnegative combination of the pieces
(plus the constant) is a valid, nondecreasing quantile function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

__all__ = ["BasisSpec", "base_quantile", "base_cdf", "base_density",
           "eval_basis", "eval_basis_deriv", "basis_matrix", "basis_deriv_matrix"]


@dataclass(frozen=True)
class BasisSpec:
    """Base family plus knot grid defining the M basis functions.

    family : "gaussian" or "student_t"
    M      : number of basis functions, >= 2
    knots  : M-2 strictly increasing interior quantile levels in (0,1);
             evenly spaced defaults are filled in when omitted
    df     : Student-t shape (ignored for the gaussian family)
    """

    family: str = "gaussian"
    M: int = 2
    knots: tuple = None
    df: float = 5.0

    def __post_init__(self):
        if self.family not in ("gaussian", "student_t"):
            raise ValueError(f"unknown base family {self.family!r}")
        if self.M < 2:
            raise ValueError("M must be at least 2")
        if self.family == "student_t" and not self.df > 0:
            raise ValueError("student_t shape must be positive")
        if self.knots is None:
            knots = tuple(np.linspace(0.0, 1.0, self.M)[1:-1])
        else:
            knots = tuple(float(k) for k in self.knots)
        if len(knots) != self.M - 2:
            raise ValueError(f"expected {self.M - 2} interior knots, got {len(knots)}")
        if any(not 0.0 < k < 1.0 for k in knots):
            raise ValueError("knots must lie strictly inside (0,1)")
        if any(a >= b for a, b in zip(knots, knots[1:])):
            raise ValueError("knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    def with_df(self, df: float) -> "BasisSpec":
        return BasisSpec(self.family, self.M, self.knots, df)

    @property
    def knot_grid(self) -> np.ndarray:
        """Extended grid (0, k_1, ..., k_{M-2}, 1) of length M."""
        return np.concatenate(([0.0], self.knots, [1.0]))


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0.0) or np.any(tau >= 1.0):
        raise ValueError("quantile level must lie in the open interval (0,1)")
    return tau


def base_quantile(spec: BasisSpec, tau):
    """q0(tau): location-0 / scale-1 quantile function of the base family."""
    tau = _check_tau(tau)
    if spec.family == "gaussian":
        return special.ndtri(tau)
    return special.stdtrit(spec.df, tau)


def base_cdf(spec: BasisSpec, z):
    z = np.asarray(z, dtype=float)
    if spec.family == "gaussian":
        return special.ndtr(z)
    return special.stdtr(spec.df, z)


_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def base_logdensity(spec: BasisSpec, z):
    z = np.asarray(z, dtype=float)
    if spec.family == "gaussian":
        return -0.5 * z * z - _LOG_SQRT_2PI
    nu = spec.df
    lognorm = (special.gammaln((nu + 1.0) / 2.0) - special.gammaln(nu / 2.0)
               - 0.5 * math.log(nu * math.pi))
    return lognorm - 0.5 * (nu + 1.0) * np.log1p(z * z / nu)


def base_density(spec: BasisSpec, z):
    return np.exp(base_logdensity(spec, z))


def basis_matrix(spec: BasisSpec, tau) -> np.ndarray:
    """Evaluate all M basis functions at the given levels.

    Returns an array of shape tau.shape + (M,).  Piece m (1-based, m >= 2)
    is active on [g[m-2], g[m-1]] for the extended grid g; below its
    interval it is 0 (q0-shaped for m = 2), above it sits at its cap.
    """
    tau = _check_tau(np.atleast_1d(tau))
    M = spec.M
    g = spec.knot_grid
    q0 = base_quantile(spec, tau)
    # q0 at interior knots only; the 0/1 endpoints are infinite and never hit
    qk = np.full(M, np.nan)
    if M > 2:
        qk[1:M - 1] = base_quantile(spec, g[1:M - 1])
    out = np.empty(tau.shape + (M,))
    out[..., 0] = 1.0
    for m in range(2, M + 1):
        lo, hi = g[m - 2], g[m - 1]
        qlo = 0.0 if m == 2 else qk[m - 2]
        active = q0 - qlo
        below = np.zeros_like(q0)
        above = np.full_like(q0, (qk[m - 1] - qlo) if m < M else np.inf)
        # m = 2 has lo = 0, so it is never flat below: it is q0 on its
        # interval (unbounded as tau -> 0) and capped above, which keeps
        # the model's support unbounded in the lower tail.  Symmetrically
        # the last piece is uncapped above (its cap is never reached).
        out[..., m - 1] = np.where(tau < lo, below, np.where(tau <= hi, active, above))
    return out


def basis_deriv_matrix(spec: BasisSpec, tau) -> np.ndarray:
    """d/dtau of every basis function: q0'(tau) on the active piece, else 0.

    At a knot the right-continuous branch applies.
    """
    tau = _check_tau(np.atleast_1d(tau))
    M = spec.M
    g = spec.knot_grid
    q0 = base_quantile(spec, tau)
    q0p = 1.0 / base_density(spec, q0)
    out = np.zeros(tau.shape + (M,))
    seg = np.searchsorted(g[1:M - 1], tau, side="right")  # active piece index - 2
    for m in range(2, M + 1):
        out[..., m - 1] = np.where(seg == m - 2, q0p, 0.0)
    return out


def eval_basis(spec: BasisSpec, m: int, tau) -> float:
    """Value of basis function m (1-based) at quantile level tau."""
    if not 1 <= m <= spec.M:
        raise ValueError(f"basis index {m} outside 1..{spec.M}")
    val = basis_matrix(spec, tau)[..., m - 1]
    return float(val.reshape(-1)[0]) if val.size == 1 else val


def eval_basis_deriv(spec: BasisSpec, m: int, tau) -> float:
    """Derivative of basis function m at tau (right-continuous at knots)."""
    if not 1 <= m <= spec.M:
        raise ValueError(f"basis index {m} outside 1..{spec.M}")
    val = basis_deriv_matrix(spec, tau)[..., m - 1]
    return float(val.reshape(-1)[0]) if val.size == 1 else val
