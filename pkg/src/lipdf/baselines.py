"""Reference filters: bootstrap SIR and the Gaussian particle filter."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from lipdf.errors import LikelihoodError
from lipdf.ssm import (
    RESAMPLERS,
    ParticleEnsemble,
    StateSpaceModel,
    effective_sample_size,
    normalize_weights,
    weighted_mean_estimate,
)


@dataclass(kw_only=True)
class FilterStepReport:
    """Diagnostics for one filter iteration. Times are seconds."""

    estimate: np.ndarray
    ess: float
    resampled: bool
    wall_time_update: float
    wall_time_total: float
    degeneracy_flag: bool = False
    likelihood_calls: int = 0
    wall_time_predict: float = 0.0
    wall_time_resample: float = 0.0
    warnings: list[str] = field(default_factory=list)


def check_likelihoods(values: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(values) | (values < 0)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise LikelihoodError(i, float(values[i]))
    return values


def direct_likelihoods(model: StateSpaceModel, particles: np.ndarray, y,
                       vectorized: bool = False) -> np.ndarray:
    """Score every particle with the model likelihood (N model calls).

    The default keeps an explicit per-particle loop; ``vectorized`` hands the
    whole array to ``model.likelihood_batch``.
    """
    if vectorized:
        values = np.asarray(model.likelihood_batch(particles, y), dtype=float)
    else:
        values = np.empty(particles.shape[0])
        for i, x in enumerate(particles):
            values[i] = model.likelihood(x, y)
    return check_likelihoods(values)


def resample_and_predict(ensemble: ParticleEnsemble, model: StateSpaceModel, t: int,
                         rng: np.random.Generator, threshold: float, resampler: str):
    """Selective resampling followed by propagation through the transition prior.

    Returns ``(ensemble, resampled, t_resample, t_predict)``.
    """
    t0 = time.perf_counter()
    resampled = False
    if effective_sample_size(ensemble.weights) < threshold * ensemble.size:
        ensemble = RESAMPLERS[resampler](ensemble, rng)
        resampled = True
    t1 = time.perf_counter()
    particles = np.asarray(model.transition(ensemble.particles, t, rng), dtype=float)
    if particles.ndim == 1:
        particles = particles[:, None]
    t2 = time.perf_counter()
    return ParticleEnsemble(particles, ensemble.weights), resampled, t1 - t0, t2 - t1


def sir_step(ensemble: ParticleEnsemble, model: StateSpaceModel, y, t: int,
             rng: np.random.Generator, *, resample_threshold: float = 0.5,
             resampler: str = "systematic", vectorized: bool = False):
    """One bootstrap SIR iteration: resample (ESS rule), propagate, weight, normalize.

    Returns
    -------
    (ParticleEnsemble, FilterStepReport)
    """
    start = time.perf_counter()
    pred, resampled, t_res, t_pred = resample_and_predict(
        ensemble, model, t, rng, resample_threshold, resampler)
    t0 = time.perf_counter()
    lik = direct_likelihoods(model, pred.particles, y, vectorized)
    t_update = time.perf_counter() - t0
    post, degenerate = normalize_weights(ParticleEnsemble(pred.particles, pred.weights * lik))
    est = weighted_mean_estimate(post)
    report = FilterStepReport(
        estimate=est,
        ess=effective_sample_size(post.weights),
        resampled=resampled,
        wall_time_update=t_update,
        wall_time_total=time.perf_counter() - start,
        degeneracy_flag=degenerate,
        likelihood_calls=pred.size,
        wall_time_predict=t_pred,
        wall_time_resample=t_res,
    )
    return post, report


def gaussian_refit(ensemble: ParticleEnsemble) -> tuple[np.ndarray, np.ndarray, bool]:
    """Weighted mean and covariance, with diagonal jitter when the covariance is singular.

    Jitter is ``1e-9 * trace / L``; the third return value flags that it was added.
    """
    mean = weighted_mean_estimate(ensemble)
    d = ensemble.particles - mean
    cov = (ensemble.weights[:, None] * d).T @ d
    try:
        np.linalg.cholesky(cov)
        return mean, cov, False
    except np.linalg.LinAlgError:
        dim = cov.shape[0]
        jitter = 1e-9 * np.trace(cov) / dim
        return mean, cov + jitter * np.eye(dim), True


def _sqrt_factor(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def gpf_step(ensemble: ParticleEnsemble, model: StateSpaceModel, y, t: int,
             rng: np.random.Generator, *, vectorized: bool = False):
    """One Gaussian particle filter iteration.

    Propagate, weight and normalize as SIR, then replace the weighted set by
    ``N`` equally weighted draws from its moment-matched Gaussian. No
    resampler is ever called. When the posterior weights are exactly uniform
    the ensemble is already equally weighted and is kept as is.
    """
    start = time.perf_counter()
    t0 = time.perf_counter()
    particles = np.asarray(model.transition(ensemble.particles, t, rng), dtype=float)
    if particles.ndim == 1:
        particles = particles[:, None]
    t1 = time.perf_counter()
    lik = direct_likelihoods(model, particles, y, vectorized)
    t_update = time.perf_counter() - t1
    post, degenerate = normalize_weights(ParticleEnsemble(particles, ensemble.weights * lik))
    est = weighted_mean_estimate(post)
    ess = effective_sample_size(post.weights)
    t2 = time.perf_counter()
    w = post.weights
    flagged = False
    if w.max() != w.min():
        mean, cov, flagged = gaussian_refit(post)
        n, dim = post.particles.shape
        draws = mean + rng.standard_normal((n, dim)) @ _sqrt_factor(cov).T
        post = ParticleEnsemble.uniform(draws)
    report = FilterStepReport(
        estimate=est,
        ess=ess,
        resampled=False,
        wall_time_update=t_update,
        wall_time_total=time.perf_counter() - start,
        degeneracy_flag=degenerate,
        likelihood_calls=particles.shape[0],
        wall_time_predict=t1 - t0,
        wall_time_resample=time.perf_counter() - t2,
    )
    if flagged:
        report.warnings.append("singular covariance: jitter added")
    return post, report
