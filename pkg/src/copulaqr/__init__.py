"""Bayesian semiparametric quantile regression for longitudinal data.

Monotone quantile-function basis models for population effects, a
Gaussian copula for within-subject dependence, Metropolis-within-Gibbs
inference with censoring/missing-data augmentation, LPML model
comparison, and a Monte Carlo simulation harness.
"""

from .basis import BasisSpec, basis_matrix, basis_deriv_matrix
from .data import PanelDataset, validate_long
from .estimator import CopulaQuantileRegressor, DEFAULT_TAU_GRID
from .marginal import FixedEffects, InvalidModelError, PredictorScaler
from .posterior import diagnostics, ess, lpml, split_rhat, summarize_beta
from .sampler import (MCMCConfig, ModelConfig, PosteriorDraws, PriorSpec,
                      run_sampler)
from .simulate import SimArm, gen_dataset, run_study, true_beta

__version__ = "0.1.0"

__all__ = [
    "BasisSpec", "basis_matrix", "basis_deriv_matrix",
    "PanelDataset", "validate_long",
    "CopulaQuantileRegressor", "DEFAULT_TAU_GRID",
    "FixedEffects", "InvalidModelError", "PredictorScaler",
    "diagnostics", "ess", "lpml", "split_rhat", "summarize_beta",
    "MCMCConfig", "ModelConfig", "PosteriorDraws", "PriorSpec", "run_sampler",
    "SimArm", "gen_dataset", "run_study", "true_beta",
    "__version__",
]
