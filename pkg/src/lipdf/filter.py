"""Particle filter with fitted likelihoods (Li-PDF).

Each activated step scores a small lattice of fulcrums with the model and
infers every particle's likelihood from them, so the number of model
evaluations per step is the fulcrum count ``M`` rather than ``N``.

Three variants:

``explicit``
    Fit the observation function to fulcrum observations and compose it with
    the Gaussian noise model.
``implicit``
    Nadaraya-Watson smoothing of fulcrum likelihoods.
``batch``
    Fit the observation function once and reuse it at every later step.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from lipdf.baselines import FilterStepReport, direct_likelihoods, resample_and_predict
from lipdf.errors import ConfigError, ContractViolation, GridTooLarge
from lipdf.fitting import BasisSpec, FitResult, compose_gaussian_likelihood, least_squares_fit
from lipdf.grid import FulcrumGrid, GridSpec, build_grid, evaluate_fulcrums, observe_fulcrums
from lipdf.smoother import SmootherConfig, construct_implicit_lipdf, smooth_ensemble
from lipdf.ssm import (
    ParticleEnsemble,
    StateSpaceModel,
    effective_sample_size,
    normalize_weights,
    weighted_mean_estimate,
    weighted_std,
)

VARIANTS = ("explicit", "implicit", "batch")


@dataclass(frozen=True)
class ActivationConfig:
    """Li-PDF runs only after ``warmup_steps`` and once the cloud is tight enough.

    ``spread_threshold`` holds one weighted-std limit per partitioned
    dimension (a single value applies to all); None disables the spread test.
    """

    spread_threshold: tuple[float, ...] | None = None
    warmup_steps: int = 0

    def __post_init__(self):
        if self.warmup_steps < 0:
            raise ConfigError("activation.warmup_steps", "must be >= 0")


@dataclass(frozen=True)
class LipdfConfig:
    variant: str = "explicit"
    grid: GridSpec = GridSpec()
    basis: BasisSpec | None = BasisSpec("monomial", 2)
    sigma: float = 1.0
    smoother: SmootherConfig = SmootherConfig()
    activation: ActivationConfig = ActivationConfig()
    fulcrum_observations: str = "auto"
    fulcrum_ratio_warning: tuple[float, float] = (1 / 5, 1 / 2)
    batch_samples: int = 100
    batch_step: int = 1
    batch_refit_every: int | None = None
    batch_exact_fit: FitResult | None = None
    resample_threshold: float = 0.5
    resampler: str = "systematic"
    vectorized: bool = False
    enabled: bool = True
    keep_grid: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError("variant", f"expected one of {VARIANTS}, got {self.variant!r}")
        if self.variant in ("explicit", "batch") and self.basis is None and self.batch_exact_fit is None:
            raise ConfigError("basis", f"required for the {self.variant} variant")
        if not self.sigma > 0:
            raise ConfigError("sigma", "must be > 0")
        if self.batch_samples < 2:
            raise ConfigError("batch_samples", "must be >= 2")


@dataclass(kw_only=True)
class LipdfStepReport(FilterStepReport):
    lipdf_active: bool = False
    fulcrum_count: int = 0
    model_likelihood_calls: int = 0
    fit_rms_residual: float | None = None
    clamped_count: int = 0
    grid_refused: bool = False
    smoother_fallbacks: int = 0
    grid: FulcrumGrid | None = None


@dataclass
class LipdfState:
    """Per-run cache; holds the batch fit between steps."""

    batch_fit: FitResult | None = None
    fitted_at: int | None = None


def should_activate(ensemble: ParticleEnsemble, config: LipdfConfig, t: int) -> bool:
    act = config.activation
    if t <= act.warmup_steps:
        return False
    if act.spread_threshold is None:
        return True
    dims = config.grid.partitioned_dims(ensemble.dim)
    thr = list(act.spread_threshold)
    if len(thr) == 1:
        thr = thr * len(dims)
    std = weighted_std(ensemble)
    return all(std[d] < limit for d, limit in zip(dims, thr))


def _scalar_obs(y) -> float:
    arr = np.asarray(y, dtype=float).reshape(-1)
    if arr.size != 1:
        raise ConfigError("variant", "explicit and batch variants need a scalar observation")
    return float(arr[0])


def _fit_dim(grid: FulcrumGrid) -> int:
    if len(grid.active_dims) != 1:
        raise ConfigError("grid.active_dims", "explicit fitting needs exactly one partitioned dimension")
    return grid.active_dims[0]


def construct_explicit_lipdf(grid: FulcrumGrid, y, config: LipdfConfig):
    """Fit fulcrum state -> observation, then wrap the fit in the Gaussian noise model.

    Returns ``(lipdf, fit)``; ``lipdf`` maps an ``(N, L)`` state array to likelihoods.
    """
    if grid.observations is None:
        raise ContractViolation("grid has no fulcrum observations")
    d = _fit_dim(grid)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = least_squares_fit(grid.points[:, d], grid.observations, config.basis)
    lik = compose_gaussian_likelihood(fit, _scalar_obs(y), config.sigma)

    def lipdf(states):
        return lik(np.atleast_2d(states)[:, d])

    return lipdf, fit


def batch_fit(x, y, basis: BasisSpec) -> FitResult:
    """Fit the time-invariant observation function once from ``(x, y)`` samples."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return least_squares_fit(x, y, basis)


def _batch_spec(spec: GridSpec, samples: int, state_dim: int) -> GridSpec:
    dims = spec.partitioned_dims(state_dim)
    if len(dims) != 1:
        raise ConfigError("grid.active_dims", "batch fitting needs exactly one partitioned dimension")
    return replace(spec, counts=[samples if d == dims[0] else 1 for d in range(state_dim)],
                   active_dims=dims)


def lipdf_step(ensemble: ParticleEnsemble, model: StateSpaceModel, y, t: int,
               config: LipdfConfig, rng: np.random.Generator,
               state: LipdfState | None = None):
    """One Li-PDF iteration: selective resample, predict, fit, weight, normalize.

    When the step is not activated (or the grid is refused) the particles are
    scored directly, exactly as :func:`lipdf.baselines.sir_step` does.

    Returns
    -------
    (ParticleEnsemble, LipdfStepReport)
    """
    if state is None:
        state = LipdfState()
    start = time.perf_counter()
    pred, resampled, t_res, t_pred = resample_and_predict(
        ensemble, model, t, rng, config.resample_threshold, config.resampler)
    n = pred.size
    report = LipdfStepReport(estimate=np.empty(0), ess=0.0, resampled=resampled,
                             wall_time_update=0.0, wall_time_total=0.0,
                             wall_time_predict=t_pred, wall_time_resample=t_res)
    t0 = time.perf_counter()
    lik = None
    if config.variant == "batch":
        lik = _batch_likelihoods(pred, model, y, t, config, rng, state, report)
    elif config.enabled and should_activate(pred, config, t):
        try:
            grid = build_grid(pred, config.grid)
        except GridTooLarge as exc:
            report.grid_refused = True
            report.warnings.append(str(exc))
        else:
            lik = _activated_likelihoods(pred, grid, model, y, config, rng, report)
    if lik is None:
        lik = direct_likelihoods(model, pred.particles, y, config.vectorized)
        report.model_likelihood_calls = n
    else:
        report.lipdf_active = True
        negative = lik < 0
        report.clamped_count = int(negative.sum())
        if report.clamped_count:
            lik = np.where(negative, 0.0, lik)
        if not np.all(np.isfinite(lik)):
            raise ContractViolation("Li-PDF produced non-finite likelihoods")
        if report.fulcrum_count:
            ratio = report.fulcrum_count / n
            low, high = config.fulcrum_ratio_warning
            if not low <= ratio <= high:
                report.warnings.append(f"fulcrum/particle ratio {ratio:.3g} outside [{low:g}, {high:g}]")
    report.wall_time_update = time.perf_counter() - t0
    report.likelihood_calls = report.model_likelihood_calls
    post, degenerate = normalize_weights(ParticleEnsemble(pred.particles, pred.weights * lik))
    report.estimate = weighted_mean_estimate(post)
    report.ess = effective_sample_size(post.weights)
    report.degeneracy_flag = degenerate
    report.wall_time_total = time.perf_counter() - start
    return post, report


def _activated_likelihoods(pred, grid, model, y, config, rng, report):
    report.fulcrum_count = grid.size
    if config.variant == "explicit":
        grid = observe_fulcrums(grid, model, rng, config.fulcrum_observations, config.vectorized)
        report.model_likelihood_calls = grid.size
        lipdf, fit = construct_explicit_lipdf(grid, y, config)
        report.fit_rms_residual = fit.rms_residual
        lik = lipdf(pred.particles)
        if config.keep_grid:
            grid = replace(grid, fitted=lipdf(grid.points))
    else:
        grid = evaluate_fulcrums(grid, model, y, config.vectorized)
        report.model_likelihood_calls = grid.size
        lik, report.smoother_fallbacks = smooth_ensemble(pred.particles, grid, config.smoother)
        if config.keep_grid:
            grid = replace(grid, fitted=construct_implicit_lipdf(grid, config.smoother)(grid.points))
    if config.keep_grid:
        report.grid = grid
    return lik


def _batch_likelihoods(pred, model, y, t, config, rng, state, report):
    if config.batch_exact_fit is not None:
        state.batch_fit = config.batch_exact_fit
    due = state.batch_fit is None or (
        config.batch_refit_every is not None and t - state.fitted_at >= config.batch_refit_every)
    if due and config.batch_exact_fit is None:
        if t < config.batch_step:
            return None
        spec = _batch_spec(config.grid, config.batch_samples, pred.dim)
        grid = build_grid(pred, spec)
        grid = observe_fulcrums(grid, model, rng, config.fulcrum_observations, config.vectorized)
        d = grid.active_dims[0]
        state.batch_fit = batch_fit(grid.points[:, d], grid.observations, config.basis)
        state.fitted_at = t
        report.model_likelihood_calls = grid.size
        report.fulcrum_count = grid.size
        report.fit_rms_residual = state.batch_fit.rms_residual
        if config.keep_grid:
            report.grid = grid
    dims = config.grid.partitioned_dims(pred.dim)
    lik = compose_gaussian_likelihood(state.batch_fit, _scalar_obs(y), config.sigma)
    return np.asarray(lik(pred.particles[:, dims[0]]), dtype=float)
