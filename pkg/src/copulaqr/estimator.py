"""Estimator facade: scaling + sampling + summaries behind one object.

Follows the scikit-learn parameter convention (constructor stores
hyperparameters, ``fit`` learns state into trailing-underscore
attributes, ``get_params``/``set_params`` work as usual) so the model
composes with generic tooling, although ``fit`` consumes a
:class:`~copulaqr.data.PanelDataset` rather than an (X, y) pair.

Covariates are mapped into [-1, 1] (required for quantile monotonicity)
and responses are standardized to mean 0 / sd 1 before sampling; all
summaries are reported back on the raw scales.  The random-effect design
is used as given.
"""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator

from .data import PanelDataset
from .marginal import PredictorScaler
from .posterior import diagnostics, lpml, summarize_beta, summarize_quantile
from .sampler import MCMCConfig, ModelConfig, PosteriorDraws, PriorSpec, run_sampler

__all__ = ["CopulaQuantileRegressor", "DEFAULT_TAU_GRID"]

DEFAULT_TAU_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)


class CopulaQuantileRegressor(BaseEstimator):
    """Bayesian quantile-function regression with optional copula dependence."""

    def __init__(self, family="gaussian", M=2, knots=None, df=5.0,
                 estimate_df=None, dependence="copula", use_random_effects=True,
                 iterations=2000, burn_in=None, thin=1, seed=0,
                 standardize_response=True, scale_predictors=True,
                 priors=None, fixed_rows=None, record_subject_loglik=True):
        self.family = family
        self.M = M
        self.knots = knots
        self.df = df
        self.estimate_df = estimate_df
        self.dependence = dependence
        self.use_random_effects = use_random_effects
        self.iterations = iterations
        self.burn_in = burn_in
        self.thin = thin
        self.seed = seed
        self.standardize_response = standardize_response
        self.scale_predictors = scale_predictors
        self.priors = priors
        self.fixed_rows = fixed_rows
        self.record_subject_loglik = record_subject_loglik

    # ------------------------------------------------------------------

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            family=self.family, M=self.M,
            knots=tuple(self.knots) if self.knots else None,
            df=self.df, estimate_df=self.estimate_df,
            dependence=self.dependence,
            use_random_effects=self.use_random_effects,
            fixed_rows=dict(self.fixed_rows or {}),
            record_subject_loglik=self.record_subject_loglik)

    def fit(self, dataset: PanelDataset, y=None):
        data = copy.deepcopy(dataset)
        valid = data.visit_mask
        if self.scale_predictors:
            rows = data.X[valid]
            self.scaler_ = PredictorScaler().fit(rows)
            data.X[valid] = self.scaler_.transform(rows)
        else:
            self.scaler_ = None
        H = data.H
        if self.standardize_response:
            self.y_center_ = np.empty(H)
            self.y_scale_ = np.empty(H)
            obs = data.observed_mask()
            for h in range(H):
                vals = data.y[..., h][obs[..., h]]
                if vals.size == 0:
                    self.y_center_[h], self.y_scale_[h] = 0.0, 1.0
                else:
                    self.y_center_[h] = vals.mean()
                    self.y_scale_[h] = vals.std() if vals.std() > 0 else 1.0
                data.y[..., h] = (data.y[..., h] - self.y_center_[h]) / self.y_scale_[h]
                data.censor[..., h] = ((data.censor[..., h] - self.y_center_[h])
                                       / self.y_scale_[h])
        else:
            self.y_center_ = np.zeros(H)
            self.y_scale_ = np.ones(H)
        priors = self.priors if self.priors is not None else PriorSpec()
        mcmc = MCMCConfig(iterations=self.iterations, burn_in=self.burn_in,
                          thin=self.thin, seed=self.seed)
        self.posterior_ = run_sampler(data, self._model_config(), priors, mcmc)
        self.response_ids_ = list(data.response_ids)
        self.param_names_ = list(data.fixed_cols)
        self.n_clipped_ = self.scaler_.n_clipped_ if self.scaler_ else 0
        return self

    # ----------------------------------------------------------- reports

    def summarize(self, tau_grid=DEFAULT_TAU_GRID, level=0.95):
        """Raw-scale posterior summaries of every covariate effect."""
        return summarize_beta(self.posterior_, tau_grid, scaler=self.scaler_,
                              y_center=self.y_center_, y_scale=self.y_scale_,
                              level=level, response_ids=self.response_ids_,
                              param_names=self.param_names_)

    def quantile_curves(self, x_raw, tau_grid=DEFAULT_TAU_GRID, level=0.95):
        """Posterior bands for Q(tau | x) at one raw-covariate profile."""
        x = np.atleast_2d(np.asarray(x_raw, dtype=float))
        x_scaled = self.scaler_.transform(x)[0] if self.scaler_ else x[0]
        return summarize_quantile(self.posterior_, tau_grid, x_scaled,
                                  y_center=self.y_center_, y_scale=self.y_scale_,
                                  level=level, response_ids=self.response_ids_)

    def lpml(self, min_draws=100):
        return lpml(self.posterior_, min_draws=min_draws)

    def diagnostics(self):
        return diagnostics(self.posterior_)
