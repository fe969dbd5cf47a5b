"""Univariate nonstationary growth model.

    x_t = x_{t-1}/2 + 25 x_{t-1} / (1 + x_{t-1}^2) + 8 cos(1.2 (t - 1)) + u_t
    y_t = 0.05 x_t^2 + v_t
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lipdf.ssm import StateSpaceModel

OBS_COEF = 0.05
_NORM = 1.0 / (math.sqrt(2.0 * math.pi) * 1.0)


def ugm_transition(x, t: int, u=0.0):
    return x / 2.0 + 25.0 * x / (1.0 + x * x) + 8.0 * np.cos(1.2 * (t - 1)) + u


def ugm_observe(x, v=0.0):
    return OBS_COEF * x ** 2 + v


def ugm_likelihood(x, y):
    """Unit-variance Gaussian likelihood of ``y`` given state ``x``."""
    g = OBS_COEF * x ** 2
    return _NORM * np.exp(-((y - g) ** 2) / 2.0)


@dataclass
class UgmParams:
    process_var: float = 10.0
    obs_var: float = 1.0
    initial_mean: float = 0.1
    initial_var: float = 2.0

    def __post_init__(self):
        if not (self.process_var > 0 and self.obs_var > 0 and self.initial_var >= 0):
            raise ValueError("variances must be positive")


class UnivariateGrowthModel(StateSpaceModel):
    """The growth model as a :class:`StateSpaceModel` with one state and one observation."""

    state_dim = 1
    obs_dim = 1

    def __init__(self, params: UgmParams | None = None):
        self.params = params or UgmParams()
        self._q_std = math.sqrt(self.params.process_var)
        self._r_std = math.sqrt(self.params.obs_var)
        self._norm = 1.0 / (math.sqrt(2.0 * math.pi) * self._r_std)
        self._two_var = 2.0 * self.params.obs_var

    def sample_initial(self, n, rng):
        p = self.params
        return (p.initial_mean + math.sqrt(p.initial_var) * rng.standard_normal(n))[:, None]

    def transition(self, particles, t, rng):
        noise = self._q_std * rng.standard_normal(particles.shape)
        return ugm_transition(particles, t, noise)

    def likelihood(self, x, y):
        g = OBS_COEF * float(x[0]) ** 2
        return self._norm * math.exp(-((float(y) - g) ** 2) / self._two_var)

    def likelihood_batch(self, particles, y):
        g = OBS_COEF * particles[:, 0] ** 2
        return self._norm * np.exp(-((y - g) ** 2) / self._two_var)

    def observe(self, x, rng):
        return ugm_observe(float(np.asarray(x).reshape(-1)[0]), self._r_std * rng.standard_normal())

    def observe_batch(self, particles, rng):
        return ugm_observe(particles[:, 0], self._r_std * rng.standard_normal(particles.shape[0]))

    def observation_map(self, particles):
        return ugm_observe(np.asarray(particles, dtype=float)[:, 0])

    def simulate(self, steps: int, rng: np.random.Generator):
        """Ground-truth states and observations for ``t = 1..steps``."""
        p = self.params
        x = p.initial_mean
        xs = np.empty(steps)
        ys = np.empty(steps)
        for t in range(1, steps + 1):
            x = ugm_transition(x, t, self._q_std * rng.standard_normal())
            xs[t - 1] = x
            ys[t - 1] = ugm_observe(x, self._r_std * rng.standard_normal())
        return xs, ys
