"""Bayesian nonparametric density estimation with Besov-Laplace priors."""

from .estimator import BesovLaplaceDensity
from .experiments import (
    StudyConfig,
    StudyResult,
    TruthSpec,
    contraction_study,
    make_truth,
    prior_diagnostics,
    simulate_data,
)
from .link import DensityOnGrid, ExponentialLink, RegularFloorLink, make_link, push_forward
from .metrics import RateFit, fit_rate, hellinger, kl_divergence, tv_distance
from .posterior import Dataset, MCMCConfig, PosteriorModel, run_chain
from .prior import HyperPrior, PriorSpec, Regime, sample_hyperprior, sample_prior
from .wavelet import CoefficientTree, GridFunction, WaveletBasis, analyze, besov_norm, synthesize

__version__ = "0.1.0"

__all__ = [
    "BesovLaplaceDensity",
    "CoefficientTree",
    "Dataset",
    "DensityOnGrid",
    "ExponentialLink",
    "GridFunction",
    "HyperPrior",
    "MCMCConfig",
    "PosteriorModel",
    "PriorSpec",
    "RateFit",
    "Regime",
    "RegularFloorLink",
    "StudyConfig",
    "StudyResult",
    "TruthSpec",
    "WaveletBasis",
    "analyze",
    "besov_norm",
    "contraction_study",
    "fit_rate",
    "hellinger",
    "kl_divergence",
    "make_link",
    "make_truth",
    "prior_diagnostics",
    "push_forward",
    "run_chain",
    "sample_hyperprior",
    "sample_prior",
    "simulate_data",
    "synthesize",
    "tv_distance",
]
