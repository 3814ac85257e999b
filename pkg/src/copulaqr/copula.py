"""Latent-Gaussian dependence layer.

Within-subject cells are linked through a Gaussian copula on latent
variables W: each cell's uniform score is U = Phi(W / sqrt(psi)) with psi
the cell's marginal latent variance, so margins are preserved no matter
the dependence.  The latent covariance combines random effects (Z D Z'),
AR-1 serial correlation over visits, and (for multiple responses) an
unstructured cross-response covariance entering through a Kronecker
product, all anchored by an identity term.

Multivariate cell layout is visit-major, response-minor: cell (j, h) sits
at flat index j * H + h.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import ndtri
from scipy.stats import norm

from .basis import base_cdf
from .marginal import FixedEffects, logpdf as marginal_logpdf, _invert, _as_design


def normal_score(spec, z):
    """Map a base-family score z to the standard-normal scale Phi^{-1}(F0(z)).

    Identity for the gaussian family; for Student-t bases the latent
    Gaussian cell lives on this transformed scale.
    """
    if spec.family == "gaussian":
        return np.asarray(z, dtype=float)
    u = np.clip(base_cdf(spec, z), U_CLIP, 1.0 - U_CLIP)
    return ndtri(u)

__all__ = ["CopulaParams", "ar1_matrix", "build_cov_univariate",
           "build_cov_multivariate", "expand_random_design", "pit_forward",
           "pit_inverse", "conditional_gaussian", "mvn_logpdf", "joint_loglik",
           "normal_score"]

U_CLIP = 1e-12


@dataclass
class CopulaParams:
    """Dependence parameters of the latent-Gaussian layer.

    alpha  : AR-1 correlation over visits, in [0, 1)
    lam    : serial scale multiplier (univariate model; ignored when H > 1)
    Lambda : H x H SPD cross-response covariance (None for H = 1)
    Delta  : (H, R) nonnegative random-effect variances
    """

    alpha: float = 0.0
    lam: float = 0.0
    Lambda: np.ndarray = None
    Delta: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))

    def __post_init__(self):
        self.Delta = np.atleast_2d(np.asarray(self.Delta, dtype=float))
        if self.Lambda is not None:
            self.Lambda = np.atleast_2d(np.asarray(self.Lambda, dtype=float))

    @property
    def H(self) -> int:
        return self.Delta.shape[0]

    @property
    def R(self) -> int:
        return self.Delta.shape[1]


def ar1_matrix(alpha: float, J: int) -> np.ndarray:
    """AR-1 correlation matrix with entries alpha^|u - v|."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("AR-1 correlation must lie in [0, 1)")
    idx = np.arange(J)
    return alpha ** np.abs(idx[:, None] - idx[None, :])


def error_cov_univariate(alpha: float, lam: float, J: int) -> np.ndarray:
    """I + lam * AR1(alpha): the univariate within-subject error covariance."""
    if lam < 0.0:
        raise ValueError("serial scale must be nonnegative")
    return np.eye(J) + lam * ar1_matrix(alpha, J)


def error_cov_multivariate(alpha: float, Lambda: np.ndarray, J: int) -> np.ndarray:
    """AR1(alpha) (x) Lambda + I, visit-major blocks of size H."""
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    H = Lambda.shape[0]
    return np.kron(ar1_matrix(alpha, J), Lambda) + np.eye(J * H)


def expand_random_design(Z: np.ndarray, H: int) -> np.ndarray:
    """Expand a per-visit design (J, R) to the stacked (J*H, R*H) layout.

    Row (j, h) carries the visit-j design values in the columns owned by
    response h, so each response has its own random-effect block.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    J, R = Z.shape
    out = np.zeros((J * H, R * H))
    for h in range(H):
        out[h::H, h * R:(h + 1) * R] = Z
    return out


def build_cov_univariate(Z, Delta, alpha, lam):
    """Psi = Z diag(Delta) Z' + I + lam * AR1(alpha); returns (Psi, diag)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    d = np.diag(np.atleast_1d(np.asarray(Delta, dtype=float)).ravel())
    Psi = Z @ d @ Z.T + error_cov_univariate(alpha, lam, Z.shape[0])
    return Psi, np.diag(Psi).copy()


def build_cov_multivariate(Z, Delta, alpha, Lambda, J=None, H=None):
    """Psi = Zexp diag(Delta) Zexp' + AR1(alpha) (x) Lambda + I.

    Delta is (H, R); Z is the per-visit design (J, R) shared by responses.
    Returns (Psi, diag) in the visit-major layout.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Delta = np.atleast_2d(np.asarray(Delta, dtype=float))
    H = Delta.shape[0] if H is None else H
    J = Z.shape[0] if J is None else J
    if Z.shape[0] != J or Delta.shape[1] != Z.shape[1]:
        raise ValueError("random-effect design and Delta dimensions disagree")
    Zexp = expand_random_design(Z, H)
    Psi = Zexp @ np.diag(Delta.ravel()) @ Zexp.T + error_cov_multivariate(alpha, Lambda, J)
    return Psi, np.diag(Psi).copy()


def pit_forward(W, psi):
    """U = Phi(W / sqrt(psi)) cell-wise, clamped away from {0, 1}."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0.0):
        raise ValueError("latent variances must be positive")
    return np.clip(norm.cdf(np.asarray(W, dtype=float) / np.sqrt(psi)),
                   U_CLIP, 1.0 - U_CLIP)


def pit_inverse(U, psi):
    """W = sqrt(psi) * Phi^{-1}(U), the exact inverse of pit_forward."""
    psi = np.asarray(psi, dtype=float)
    if np.any(psi <= 0.0):
        raise ValueError("latent variances must be positive")
    return np.sqrt(psi) * norm.ppf(np.asarray(U, dtype=float))


def conditional_gaussian(Psi, observed_idx, observed_values, mean=None):
    """Condition N(mean, Psi) on a subset of coordinates.

    Returns (mean, covariance) of the unobserved block given the observed
    values.  A tiny ridge is added if the observed block is numerically
    singular.
    """
    Psi = np.asarray(Psi, dtype=float)
    n = Psi.shape[0]
    mu = np.zeros(n) if mean is None else np.asarray(mean, dtype=float)
    obs = np.asarray(observed_idx, dtype=int)
    mask = np.zeros(n, dtype=bool)
    mask[obs] = True
    hid = np.flatnonzero(~mask)
    if hid.size == 0:
        return np.empty(0), np.empty((0, 0))
    if obs.size == 0:
        return mu[hid].copy(), Psi[np.ix_(hid, hid)].copy()
    S11 = Psi[np.ix_(obs, obs)]
    S21 = Psi[np.ix_(hid, obs)]
    try:
        fac = cho_factor(S11, lower=True)
    except np.linalg.LinAlgError:
        fac = cho_factor(S11 + 1e-10 * np.eye(obs.size), lower=True)
    resid = np.asarray(observed_values, dtype=float) - mu[obs]
    gain = cho_solve(fac, S21.T).T
    cond_mean = mu[hid] + gain @ resid
    cond_cov = Psi[np.ix_(hid, hid)] - gain @ S21.T
    return cond_mean, cond_cov


def mvn_logpdf(w, Sigma):
    """Zero-mean multivariate normal log-density via Cholesky."""
    w = np.asarray(w, dtype=float)
    L = np.linalg.cholesky(np.asarray(Sigma, dtype=float))
    v = solve_triangular(L, w, lower=True)
    return (-0.5 * w.size * np.log(2.0 * np.pi)
            - np.sum(np.log(np.diag(L))) - 0.5 * float(v @ v))


def joint_loglik(y, X, response_idx, fes, Psi, psi=None, observed=None):
    """Joint log-likelihood of one subject's observed cells.

    y, X, response_idx index the subject's cells in the visit-major
    layout; ``fes`` is one FixedEffects per response.  ``observed`` masks
    which cells carry a value (others are marginalized out of Psi).  The
    total is the sum of marginal log-densities plus the Gaussian copula
    correction, which vanishes when Psi restricted to the observed cells
    is diagonal.
    """
    y = np.asarray(y, dtype=float)
    response_idx = np.asarray(response_idx, dtype=int)
    psi = np.diag(Psi) if psi is None else np.asarray(psi, dtype=float)
    obs = np.arange(y.size) if observed is None else np.flatnonzero(observed)
    if obs.size == 0:
        return 0.0
    total = 0.0
    z = np.empty(obs.size)
    for h, fe in enumerate(fes):
        sel = response_idx[obs] == h
        if not np.any(sel):
            continue
        cells = obs[sel]
        lp = marginal_logpdf(y[cells], _as_design(X[cells], fe.P), fe)
        _, z_h, _ = _invert(y[cells], _as_design(X[cells], fe.P), fe)
        z[sel] = normal_score(fe.basis, z_h)
        total += float(np.sum(lp))
    W = np.sqrt(psi[obs]) * z
    total += mvn_logpdf(W, Psi[np.ix_(obs, obs)])
    total -= float(np.sum(norm.logpdf(z) - 0.5 * np.log(psi[obs])))
    return total
