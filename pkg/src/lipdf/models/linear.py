"""Scalar linear-Gaussian model, used to check filters against a Kalman filter."""

from __future__ import annotations

import math

import numpy as np

from lipdf.ssm import StateSpaceModel


class LinearGaussianModel(StateSpaceModel):
    """``x_t = a x_{t-1} + N(0, q)``, ``y_t = h x_t + N(0, r)``, ``x_0 ~ N(m0, p0)``."""

    state_dim = 1
    obs_dim = 1

    def __init__(self, a=0.9, h=1.0, q=1.0, r=1.0, m0=0.0, p0=1.0):
        self.a, self.h, self.q, self.r, self.m0, self.p0 = a, h, q, r, m0, p0

    def sample_initial(self, n, rng):
        return (self.m0 + math.sqrt(self.p0) * rng.standard_normal(n))[:, None]

    def transition(self, particles, t, rng):
        return self.a * particles + math.sqrt(self.q) * rng.standard_normal(particles.shape)

    def likelihood(self, x, y):
        return math.exp(-0.5 * (float(y) - self.h * float(x[0])) ** 2 / self.r) / math.sqrt(
            2 * math.pi * self.r)

    def likelihood_batch(self, particles, y):
        return np.exp(-0.5 * (y - self.h * particles[:, 0]) ** 2 / self.r) / math.sqrt(
            2 * math.pi * self.r)

    def observe(self, x, rng):
        return self.h * float(np.asarray(x).reshape(-1)[0]) + math.sqrt(self.r) * rng.standard_normal()

    def observation_map(self, particles):
        return self.h * np.asarray(particles, dtype=float)[:, 0]

    def simulate(self, steps, rng):
        x = self.m0 + math.sqrt(self.p0) * rng.standard_normal()
        xs, ys = np.empty(steps), np.empty(steps)
        for t in range(steps):
            x = self.a * x + math.sqrt(self.q) * rng.standard_normal()
            xs[t] = x
            ys[t] = self.h * x + math.sqrt(self.r) * rng.standard_normal()
        return xs, ys
