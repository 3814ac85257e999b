"""Marginal quantile-function regression model.

The conditional quantile function is Q(tau | x) = sum_p x_p sum_m I_m(tau)
theta[m, p], built from the monotone basis in :mod:`copulaqr.basis`.  With
scaled covariates (|x_p| <= 1, intercept first) and the row-dominance
constraint on theta, Q is strictly increasing in tau, so it has an exact
piecewise-analytic inverse: within each inter-knot segment Q is affine in
the base quantile q0, and the CDF is the base CDF of an affine rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .basis import (BasisSpec, base_cdf, base_density, base_logdensity, base_quantile,
                    basis_matrix)

__all__ = ["FixedEffects", "constrain", "constrain_matrix", "quantile",
           "cdf", "pdf", "logpdf", "censored_tail_prob", "PredictorScaler",
           "InvalidModelError", "FALLBACK_INTERCEPT"]

FALLBACK_INTERCEPT = 0.001


class InvalidModelError(ValueError):
    """The weight matrix does not define a valid (monotone) quantile model."""


def constrain(theta_star_row, m: int) -> np.ndarray:
    """Map one unconstrained weight row to the constrained space.

    Rows with m > 1 must have an intercept weight dominating the absolute
    sum of the covariate weights; rows that violate this collapse to the
    fallback (0.001, 0, ..., 0).  Row m = 1 is unconstrained.
    """
    row = np.asarray(theta_star_row, dtype=float)
    if m == 1 or row[0] > np.sum(np.abs(row[1:])):
        return row.copy()
    out = np.zeros_like(row)
    out[0] = FALLBACK_INTERCEPT
    return out


def constrain_matrix(theta_star: np.ndarray) -> np.ndarray:
    """Row-wise constraint transform of a full M x P weight matrix."""
    theta_star = np.asarray(theta_star, dtype=float)
    theta = theta_star.copy()
    bad = theta_star[1:, 0] <= np.sum(np.abs(theta_star[1:, 1:]), axis=1)
    theta[1:][bad] = 0.0
    theta[1:, 0][bad] = FALLBACK_INTERCEPT
    return theta


@dataclass(frozen=True)
class FixedEffects:
    """Constrained weights for one response plus the latent unconstrained ones."""

    basis: BasisSpec
    theta_star: np.ndarray
    theta: np.ndarray = None

    def __post_init__(self):
        ts = np.atleast_2d(np.asarray(self.theta_star, dtype=float))
        if ts.shape[0] != self.basis.M:
            raise ValueError(f"theta_star must have {self.basis.M} rows")
        object.__setattr__(self, "theta_star", ts)
        object.__setattr__(self, "theta", constrain_matrix(ts))

    @property
    def P(self) -> int:
        return self.theta.shape[1]


def _as_design(x, P):
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[-1] != P:
        raise ValueError(f"covariate vector length {X.shape[-1]} != P = {P}")
    return X


def quantile(tau, x, fe: FixedEffects):
    """Q(tau | x); vectorized over matching tau / x rows."""
    X = _as_design(x, fe.P)
    tau_arr = np.atleast_1d(np.asarray(tau, dtype=float))
    B = basis_matrix(fe.basis, tau_arr)            # (n, M)
    beta = B @ fe.theta                            # (n, P)
    if X.shape[0] == 1 and tau_arr.shape[0] > 1:
        X = np.broadcast_to(X, (tau_arr.shape[0], fe.P))
    q = np.einsum("np,np->n", X, beta)
    return float(q[0]) if np.isscalar(tau) or np.ndim(tau) == 0 else q


def _knot_quantiles(X, fe: FixedEffects):
    """Q at the interior knots for every design row: (n, M-2)."""
    spec = fe.basis
    if spec.M == 2:
        return np.empty((X.shape[0], 0))
    Bk = basis_matrix(spec, np.asarray(spec.knots))   # (M-2, M)
    return X @ (Bk @ fe.theta).T


def _invert(y, X, fe: FixedEffects):
    """Solve Q(tau|x) = y segment-by-segment.

    Returns (u, z, b): the quantile level, the base-scale value
    z = q0(u), and the active segment slope b = x . theta[active row].
    """
    spec = fe.basis
    y = np.asarray(y, dtype=float)
    Qk = _knot_quantiles(X, fe)
    seg = np.sum(y[:, None] > Qk, axis=1)             # 0 .. M-2
    b = np.einsum("np,np->n", X, fe.theta[seg + 1])
    if np.any(b <= 0.0):
        raise InvalidModelError(
            "non-increasing quantile function: check the weight constraint "
            "and that covariates are scaled into [-1, 1]")
    if spec.M == 2:
        a = X @ fe.theta[0]
    else:
        q0k = base_quantile(spec, np.asarray(spec.knots))
        # reference an interior knot bordering the segment; Q is continuous
        # there so the segment-affine form holds at the boundary
        ref = np.clip(seg - 1, 0, spec.M - 3)
        a = Qk[np.arange(len(y)), ref] - b * q0k[ref]
    z = (y - a) / b
    return base_cdf(spec, z), z, b


def cdf(y, x, fe: FixedEffects):
    """F(y | x): exact inverse of the quantile function."""
    X = _as_design(x, fe.P)
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if X.shape[0] == 1 and y_arr.shape[0] > 1:
        X = np.broadcast_to(X, (y_arr.shape[0], fe.P))
    u, _, _ = _invert(y_arr, X, fe)
    return float(u[0]) if np.ndim(y) == 0 else u


def logpdf(y, x, fe: FixedEffects):
    """log f(y | x) = log f0(z) - log b on the active segment."""
    X = _as_design(x, fe.P)
    y_arr = np.atleast_1d(np.asarray(y, dtype=float))
    if X.shape[0] == 1 and y_arr.shape[0] > 1:
        X = np.broadcast_to(X, (y_arr.shape[0], fe.P))
    _, z, b = _invert(y_arr, X, fe)
    out = base_logdensity(fe.basis, z) - np.log(b)
    return float(out[0]) if np.ndim(y) == 0 else out


def pdf(y, x, fe: FixedEffects):
    """Density f(y | x) = 1 / Q'(F(y|x) | x), positive on the support."""
    return np.exp(logpdf(y, x, fe))


def censored_tail_prob(c, x, fe: FixedEffects):
    """P(Y > c | x) = 1 - F(c | x) for a right-censoring threshold c."""
    return 1.0 - cdf(c, x, fe)


class PredictorScaler(TransformerMixin, BaseEstimator):
    """Affine per-column map of raw covariates onto [-1, 1].

    Fit on training covariates and frozen: each non-intercept column is
    mapped min -> -1, max -> +1.  Columns that are identically 1 are
    treated as the intercept and passed through.  Out-of-range values at
    transform time are clipped (counted in ``n_clipped_``) because the
    monotonicity guarantee of the quantile model needs |x_p| <= 1.
    """

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lo, hi = X.min(axis=0), X.max(axis=0)
        self.is_intercept_ = np.all(X == 1.0, axis=0)
        degenerate = (hi == lo) & ~self.is_intercept_
        if np.any(degenerate):
            cols = np.flatnonzero(degenerate).tolist()
            raise ValueError(f"constant non-intercept column(s) {cols}: "
                             "cannot be scaled to [-1, 1]")
        self.center_ = np.where(self.is_intercept_, 0.0, (hi + lo) / 2.0)
        self.half_range_ = np.where(self.is_intercept_, 1.0, (hi - lo) / 2.0)
        self.n_clipped_ = 0
        return self

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        scaled = (X - self.center_) / self.half_range_
        out = np.clip(scaled, -1.0, 1.0)
        self.n_clipped_ += int(np.sum(out != scaled))
        return out

    def inverse_transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X * self.half_range_ + self.center_
