"""Particle filtering with fitted likelihoods."""

from lipdf.baselines import FilterStepReport, gpf_step, sir_step
from lipdf.errors import (
    ConfigError,
    ContractViolation,
    GridTooLarge,
    LikelihoodError,
    RankDeficientError,
    UnderpopulatedInterval,
)
from lipdf.filter import ActivationConfig, LipdfConfig, LipdfState, LipdfStepReport, lipdf_step
from lipdf.fitting import BasisSpec, FitResult, least_squares_fit, piecewise_fit
from lipdf.grid import FulcrumGrid, GridSpec, build_grid
from lipdf.smoother import SmootherConfig, smooth_ensemble
from lipdf.ssm import CountingModel, ParticleEnsemble, StateSpaceModel, effective_sample_size

__all__ = [
    "ActivationConfig",
    "BasisSpec",
    "ConfigError",
    "ContractViolation",
    "CountingModel",
    "FilterStepReport",
    "FitResult",
    "FulcrumGrid",
    "GridSpec",
    "GridTooLarge",
    "LikelihoodError",
    "LipdfConfig",
    "LipdfState",
    "LipdfStepReport",
    "ParticleEnsemble",
    "RankDeficientError",
    "SmootherConfig",
    "StateSpaceModel",
    "UnderpopulatedInterval",
    "build_grid",
    "effective_sample_size",
    "gpf_step",
    "least_squares_fit",
    "lipdf_step",
    "piecewise_fit",
    "sir_step",
    "smooth_ensemble",
]

__version__ = "0.1.0"
