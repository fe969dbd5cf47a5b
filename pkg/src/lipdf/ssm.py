"""State-space model interface, particle ensembles and resampling.

Particles are stored as an ``(N, L)`` float array; weights as an ``(N,)``
array. Every stochastic routine takes an explicit :class:`numpy.random.Generator`
so a run is reproducible from its seed alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lipdf.errors import ContractViolation

NORMALIZATION_TOL = 1e-9


@dataclass
class ParticleEnsemble:
    """Weighted particle set carried between filter steps.

    Parameters
    ----------
    particles : ndarray, shape (N, L)
        Particle states. A 1-D input is treated as ``L = 1``.
    weights : ndarray, shape (N,)
        Nonnegative importance weights.
    """

    particles: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.particles, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        if p.ndim != 2 or p.shape[0] < 1:
            raise ContractViolation(f"particles must have shape (N, L) with N >= 1, got {p.shape}")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != p.shape[0]:
            raise ContractViolation(f"{w.shape[0]} weights for {p.shape[0]} particles")
        self.particles = p
        self.weights = w

    @classmethod
    def uniform(cls, particles) -> "ParticleEnsemble":
        p = np.asarray(particles, dtype=float)
        n = p.shape[0]
        return cls(p, np.full(n, 1.0 / n))

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.particles.copy(), self.weights.copy())


class StateSpaceModel:
    """Behavioral interface for a discrete-time state-space model.

    Subclasses implement ``transition``, ``likelihood`` and ``observe``.
    ``transition`` is vectorized over particles; ``likelihood`` scores one
    state at a time, which is the per-particle cost the filters measure.
    ``likelihood_batch`` may be overridden with an array implementation.
    """

    state_dim: int = 1
    obs_dim: int = 1

    def sample_initial(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def transition(self, particles: np.ndarray, t: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def likelihood(self, x: np.ndarray, y) -> float:
        raise NotImplementedError

    def likelihood_batch(self, particles: np.ndarray, y) -> np.ndarray:
        return np.array([self.likelihood(x, y) for x in particles], dtype=float)

    def observe(self, x: np.ndarray, rng: np.random.Generator):
        """Simulate one noisy observation of state ``x``."""
        raise NotImplementedError

    def observe_batch(self, particles: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.array([self.observe(x, rng) for x in particles], dtype=float)

    def observation_map(self, particles: np.ndarray) -> np.ndarray:
        """Noiseless observation of each row of ``particles``, if the model exposes one."""
        raise NotImplementedError

    @property
    def has_observation_map(self) -> bool:
        return type(self).observation_map is not StateSpaceModel.observation_map


class CountingModel(StateSpaceModel):
    """Wrap a model and count every per-state likelihood or observation evaluation."""

    def __init__(self, inner: StateSpaceModel):
        self.inner = inner
        self.state_dim = inner.state_dim
        self.obs_dim = inner.obs_dim
        self.likelihood_calls = 0
        self.observation_calls = 0

    @property
    def model_calls(self) -> int:
        return self.likelihood_calls + self.observation_calls

    def reset(self) -> None:
        self.likelihood_calls = 0
        self.observation_calls = 0

    def sample_initial(self, n, rng):
        return self.inner.sample_initial(n, rng)

    def transition(self, particles, t, rng):
        return self.inner.transition(particles, t, rng)

    def likelihood(self, x, y):
        self.likelihood_calls += 1
        return self.inner.likelihood(x, y)

    def likelihood_batch(self, particles, y):
        self.likelihood_calls += len(particles)
        return self.inner.likelihood_batch(particles, y)

    def observe(self, x, rng):
        self.observation_calls += 1
        return self.inner.observe(x, rng)

    def observe_batch(self, particles, rng):
        self.observation_calls += len(particles)
        return self.inner.observe_batch(particles, rng)

    def observation_map(self, particles):
        self.observation_calls += len(particles)
        return self.inner.observation_map(particles)

    @property
    def has_observation_map(self) -> bool:
        return self.inner.has_observation_map

    def __getattr__(self, name):
        # only reached for attributes not defined here (world, params, ...)
        return getattr(self.inner, name)


def normalize_weights(ensemble: ParticleEnsemble) -> tuple[ParticleEnsemble, bool]:
    """Scale weights to sum to one.

    Returns the normalized ensemble and a degeneracy flag. An all-zero weight
    vector is reset to uniform and flagged rather than raising, so a filter
    run can continue past a frame in which every particle scored zero.
    """
    w = ensemble.weights
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ContractViolation("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0.0:
        n = w.shape[0]
        return ParticleEnsemble(ensemble.particles, np.full(n, 1.0 / n)), True
    return ParticleEnsemble(ensemble.particles, w / total), False


def _check_normalized(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > NORMALIZATION_TOL:
        raise ContractViolation("weights must be nonnegative and sum to 1")
    return w


def effective_sample_size(weights) -> float:
    """Return ``1 / sum(w**2)`` for normalized weights."""
    w = _check_normalized(weights)
    return float(1.0 / np.dot(w, w))


def systematic_indices(weights, rng: np.random.Generator | None = None, u0: float | None = None,
                       n: int | None = None) -> np.ndarray:
    """Ancestor indices from systematic resampling.

    One offset ``u0`` in [0, 1) is drawn (or supplied) and the strata
    ``(u0 + i) / n`` are located in the weight CDF.
    """
    w = _check_normalized(weights)
    n = w.shape[0] if n is None else n
    if u0 is None:
        u0 = rng.random()
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    positions = (u0 + np.arange(n)) / n
    return np.searchsorted(cdf, positions, side="right")


def residual_indices(weights, rng: np.random.Generator, u0: float | None = None) -> np.ndarray:
    """Ancestor indices from residual resampling.

    Each particle gets ``floor(N w_i)`` deterministic copies; the remaining
    ``R`` offspring are drawn systematically from the residual weights.
    """
    w = _check_normalized(weights)
    n = w.shape[0]
    scaled = n * w
    copies = np.floor(scaled).astype(np.int64)
    remainder = n - int(copies.sum())
    idx = np.repeat(np.arange(n), copies)
    if remainder > 0:
        resid = scaled - copies
        resid = resid / resid.sum()
        extra = systematic_indices(resid, rng, u0=u0, n=remainder)
        idx = np.concatenate([idx, extra])
    return idx


def _resampled(ensemble: ParticleEnsemble, idx: np.ndarray) -> ParticleEnsemble:
    n = ensemble.size
    return ParticleEnsemble(ensemble.particles[idx], np.full(n, 1.0 / n))


def systematic_resample(ensemble: ParticleEnsemble, rng: np.random.Generator,
                        u0: float | None = None) -> ParticleEnsemble:
    return _resampled(ensemble, systematic_indices(ensemble.weights, rng, u0=u0))


def residual_resample(ensemble: ParticleEnsemble, rng: np.random.Generator,
                      u0: float | None = None) -> ParticleEnsemble:
    return _resampled(ensemble, residual_indices(ensemble.weights, rng, u0=u0))


RESAMPLERS = {
    "systematic": systematic_resample,
    "residual": residual_resample,
}


def weighted_mean_estimate(ensemble: ParticleEnsemble) -> np.ndarray:
    w = _check_normalized(ensemble.weights)
    return w @ ensemble.particles


def weighted_std(ensemble: ParticleEnsemble) -> np.ndarray:
    """Per-coordinate weighted standard deviation."""
    mean = weighted_mean_estimate(ensemble)
    var = ensemble.weights @ (ensemble.particles - mean) ** 2
    return np.sqrt(np.maximum(var, 0.0))


def circular_weighted_mean(angles: np.ndarray, weights: np.ndarray) -> float:
    s = float(np.dot(weights, np.sin(angles)))
    c = float(np.dot(weights, np.cos(angles)))
    return float(np.arctan2(s, c))
