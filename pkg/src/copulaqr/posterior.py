"""Posterior summaries, LPML model comparison, and chain diagnostics."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from .basis import BasisSpec, basis_matrix

__all__ = ["beta_draw_matrix", "summarize_beta", "summarize_quantile",
           "lpml", "ess", "split_rhat", "diagnostics"]


def _specs_per_draw(meta, draws):
    family = meta["model"]["family"]
    M = meta["model"]["M"]
    knots = tuple(meta["model"]["knots"]) if meta["model"]["knots"] else None
    if "df" in draws:
        return [BasisSpec(family, M, knots, float(df)) for df in draws["df"]]
    spec = BasisSpec(family, M, knots)
    return [spec] * draws["theta"].shape[0]


def beta_draw_matrix(posterior, tau_grid) -> np.ndarray:
    """Per-draw covariate effects beta_p(tau): (n_draws, H, n_tau, P).

    Model (scaled-covariate, standardized-response) scale.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    theta = posterior.draws["theta"]               # (n, H, M, P)
    specs = _specs_per_draw(posterior.meta, posterior.draws)
    n, H = theta.shape[:2]
    out = np.empty((n, H, tau_grid.size, theta.shape[3]))
    prev_spec, B = None, None
    for d in range(n):
        spec = specs[d]
        if spec is not prev_spec:
            B = basis_matrix(spec, tau_grid)       # (n_tau, M)
            prev_spec = spec
        for h in range(H):
            out[d, h] = B @ theta[d, h]
    return out


def _raw_scale_beta(beta, scaler=None, y_center=0.0, y_scale=1.0):
    """Undo predictor scaling and response standardization.

    beta has trailing axis P (intercept first).  The intercept process
    absorbs the covariate centering terms; slopes divide by the covariate
    half-ranges and multiply by the response scale.
    """
    out = beta.copy()
    y_center = np.atleast_1d(np.asarray(y_center, dtype=float))
    y_scale = np.atleast_1d(np.asarray(y_scale, dtype=float))
    if scaler is not None:
        c, hr = scaler.center_, scaler.half_range_
        shift = np.tensordot(out[..., 1:], c[1:] / hr[1:], axes=([-1], [0]))
        out[..., 0] = out[..., 0] - shift
        out[..., 1:] = out[..., 1:] / hr[1:]
    # broadcast response scale over the H axis (axis 1)
    ys = y_scale[None, :, None, None]
    yc = y_center[None, :, None, None]
    out = out * ys
    out[..., 0] += yc[..., 0]
    return out


def summarize_beta(posterior, tau_grid, scaler=None, y_center=0.0,
                   y_scale=1.0, level=0.95,
                   response_ids=None, param_names=None) -> pd.DataFrame:
    """Posterior mean and credible interval of every beta_p(tau)."""
    if posterior.n_draws == 0:
        raise ValueError("no retained draws to summarize")
    tau_grid = np.asarray(tau_grid, dtype=float)
    beta = beta_draw_matrix(posterior, tau_grid)
    beta = _raw_scale_beta(beta, scaler, y_center, y_scale)
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    n, H, T, P = beta.shape
    resp = response_ids or list(range(H))
    names = param_names or [f"beta_{p}" for p in range(P)]
    rows = []
    for h in range(H):
        for p in range(P):
            for t, tau in enumerate(tau_grid):
                col = beta[:, h, t, p]
                rows.append({"response": resp[h], "parameter": names[p],
                             "tau": tau, "mean": col.mean(),
                             "lower": np.quantile(col, lo_q),
                             "upper": np.quantile(col, hi_q)})
    return pd.DataFrame(rows)


def summarize_quantile(posterior, tau_grid, x_scaled, scaler=None,
                       y_center=0.0, y_scale=1.0, level=0.95,
                       response_ids=None) -> pd.DataFrame:
    """Posterior bands for the conditional quantile function Q(tau | x)."""
    tau_grid = np.asarray(tau_grid, dtype=float)
    x_scaled = np.asarray(x_scaled, dtype=float)
    beta = beta_draw_matrix(posterior, tau_grid)   # model scale
    q = np.tensordot(beta, x_scaled, axes=([-1], [0]))   # (n, H, T)
    y_center = np.atleast_1d(np.asarray(y_center, dtype=float))
    y_scale = np.atleast_1d(np.asarray(y_scale, dtype=float))
    q = q * y_scale[None, :, None] + y_center[None, :, None]
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    H = q.shape[1]
    resp = response_ids or list(range(H))
    rows = []
    for h in range(H):
        for t, tau in enumerate(tau_grid):
            col = q[:, h, t]
            rows.append({"response": resp[h], "tau": tau, "mean": col.mean(),
                         "lower": np.quantile(col, lo_q),
                         "upper": np.quantile(col, hi_q)})
    return pd.DataFrame(rows)


def lpml(posterior, min_draws=100):
    """Log pseudo marginal likelihood from stored subject log-likelihoods.

    CPO_i is the harmonic mean of the subject likelihood across draws;
    LPML is the sum of log CPO_i.  Larger is better.
    """
    if "subject_loglik" not in posterior.draws:
        raise ValueError("run was fitted without subject log-likelihood recording")
    ll = posterior.draws["subject_loglik"]         # (n_draws, N)
    n = ll.shape[0]
    if n < min_draws:
        raise ValueError(f"need at least {min_draws} retained draws, have {n}")
    log_cpo = math.log(n) - logsumexp(-ll, axis=0)
    bad = np.flatnonzero(~np.isfinite(log_cpo)).tolist()
    return float(np.sum(log_cpo)), bad


# ------------------------------------------------------------ diagnostics

def ess(x) -> float:
    """Effective sample size via Geyer's initial monotone sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.ptp(x) == 0.0:
        return float("nan")
    x = x - x.mean()
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # Geyer: sum pair autocorrelations while positive and nonincreasing
    npairs = (n - 1) // 2
    total = 0.0
    prev = np.inf
    for m in range(npairs):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        total += pair
    tau = max(2.0 * total - 1.0, 1e-12)
    return float(n / tau)


def split_rhat(x) -> float:
    """Potential scale reduction from two half-chains."""
    x = np.asarray(x, dtype=float)
    n = x.size // 2
    if n < 2 or np.ptp(x) == 0.0:
        return float("nan")
    halves = np.stack([x[:n], x[n:2 * n]])
    W = halves.var(axis=1, ddof=1).mean()
    B = n * halves.mean(axis=1).var(ddof=1)
    if W == 0.0:
        return float("nan")
    var_hat = (n - 1) / n * W + B / n
    return float(math.sqrt(var_hat / W))


def diagnostics(posterior) -> pd.DataFrame:
    """ESS and split-Rhat for every stored scalar parameter chain."""
    rows = []
    for name, arr in posterior.draws.items():
        if name in ("subject_loglik", "gamma", "u_censored", "theta_star"):
            continue
        flat = arr.reshape(arr.shape[0], -1)
        for k in range(flat.shape[1]):
            chain = flat[:, k]
            rows.append({"parameter": f"{name}[{k}]" if flat.shape[1] > 1 else name,
                         "ess": ess(chain), "rhat": split_rhat(chain),
                         "flagged": bool(np.ptp(chain) == 0.0)})
    return pd.DataFrame(rows)
