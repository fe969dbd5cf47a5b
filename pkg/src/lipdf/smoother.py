"""Nadaraya-Watson smoothing of fulcrum likelihoods onto particles."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lipdf.errors import ConfigError, ContractViolation
from lipdf.grid import FulcrumGrid, Neighbors, fulcrum_distances, nearest_fulcrums

_CHUNK = 4096


@dataclass(frozen=True)
class SmootherConfig:
    """Kernel settings.

    ``kernel="nn"`` averages the ``neighbor_count`` nearest fulcrums with
    equal weight. ``kernel="uniform"`` weights every fulcrum within
    ``bandwidth`` by ``bandwidth / distance``. A ``bandwidth`` of None means
    1.5 times the largest grid spacing.
    """

    kernel: str = "nn"
    neighbor_count: int = 4
    bandwidth: float | None = None
    clamp_negative: bool = True

    def __post_init__(self):
        if self.kernel not in ("nn", "uniform"):
            raise ConfigError("smoother.kernel", f"unknown kernel {self.kernel!r}")
        if self.neighbor_count < 1:
            raise ConfigError("smoother.neighbor_count", "must be >= 1")
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError("smoother.bandwidth", "must be > 0")

    def resolve_bandwidth(self, grid: FulcrumGrid | None) -> float:
        if self.bandwidth is not None:
            return self.bandwidth
        if grid is None:
            raise ContractViolation("bandwidth unset and no grid to derive it from")
        return 1.5 * float(np.max(grid.spacing))


def kernel_weight(distance: float, config: SmootherConfig, bandwidth: float | None = None,
                  selected: bool = True) -> float:
    """Kernel weight of a fulcrum at ``distance`` from the query.

    Under the NN kernel every selected neighbour gets the constant ``h``.
    Under the uniform kernel the weight is ``h / distance`` inside the
    bandwidth and 0 outside; distance 0 is never evaluated here.
    """
    h = config.bandwidth if bandwidth is None else bandwidth
    if config.kernel == "nn":
        return h if selected else 0.0
    if distance <= 0:
        raise ContractViolation("uniform kernel is singular at distance 0")
    return h / distance if distance <= h else 0.0


def nw_estimate(neighbors: Neighbors, config: SmootherConfig,
                bandwidth: float | None = None) -> tuple[float, bool]:
    """Kernel-weighted average of neighbour likelihoods.

    Returns the estimate and a fallback flag (set when every kernel weight was
    zero and the nearest neighbour's value was used instead).
    """
    if len(neighbors) == 0:
        raise ContractViolation("no neighbours")
    values = np.asarray(neighbors.likelihoods, dtype=float)
    dist = np.asarray(neighbors.distances, dtype=float)
    h = config.bandwidth if bandwidth is None else bandwidth
    if config.kernel == "uniform":
        hit = np.flatnonzero(dist == 0)
        if hit.size:
            return _clamp(float(values[hit[0]]), config), neighbors.fallback
        weights = np.where(dist <= h, h / dist, 0.0)
    else:
        weights = np.full(values.shape, h if h is not None else 1.0)
    total = weights.sum()
    if total <= 0:
        return _clamp(float(values[np.argmin(dist)]), config), True
    return _clamp(float(weights @ values / total), config), neighbors.fallback


def _clamp(value: float, config: SmootherConfig) -> float:
    return max(value, 0.0) if config.clamp_negative else value


def infer_likelihood(grid: FulcrumGrid, query, config: SmootherConfig) -> tuple[float, bool]:
    """Single-query path: neighbour search then ``nw_estimate``."""
    h = config.resolve_bandwidth(grid)
    if config.kernel == "nn":
        nb = nearest_fulcrums(grid, query, count=config.neighbor_count)
    else:
        nb = nearest_fulcrums(grid, query, radius=h)
    return nw_estimate(nb, config, bandwidth=h)


def smooth_ensemble(particles, grid: FulcrumGrid, config: SmootherConfig) -> tuple[np.ndarray, int]:
    """Infer one likelihood per particle from the fulcrum likelihoods.

    Vectorized equivalent of calling :func:`infer_likelihood` per particle;
    makes no model calls. Returns the likelihoods and the number of
    fallbacks taken.
    """
    if grid.likelihoods is None:
        raise ContractViolation("grid likelihoods are not set")
    pts = np.atleast_2d(np.asarray(particles, dtype=float))
    h = config.resolve_bandwidth(grid)
    fy = grid.likelihoods
    out = np.empty(pts.shape[0])
    fallbacks = 0
    for start in range(0, pts.shape[0], _CHUNK):
        dist = fulcrum_distances(grid, pts[start:start + _CHUNK])
        if config.kernel == "nn":
            k = min(config.neighbor_count, grid.size)
            est = fy[_nearest_indices(dist, k)].mean(axis=1)
        else:
            est, fb = _uniform_rows(dist, fy, h)
            fallbacks += fb
        out[start:start + _CHUNK] = est
    if config.clamp_negative:
        np.maximum(out, 0.0, out=out)
    return out, fallbacks


def _nearest_indices(dist: np.ndarray, k: int) -> np.ndarray:
    """Columns of the ``k`` nearest fulcrums per row; ties go to the lower index."""
    if k == dist.shape[1]:
        return np.broadcast_to(np.arange(k), dist.shape)
    idx = np.argpartition(dist, k - 1, axis=1)[:, :k]
    kth = np.take_along_axis(dist, idx, axis=1).max(axis=1, keepdims=True)
    tied = np.flatnonzero((dist <= kth).sum(axis=1) > k)
    if tied.size:
        idx[tied] = np.argsort(dist[tied], axis=1, kind="stable")[:, :k]
    return idx


def _uniform_rows(dist: np.ndarray, fy: np.ndarray, h: float) -> tuple[np.ndarray, int]:
    inside = dist <= h
    exact = dist == 0
    with np.errstate(divide="ignore"):
        w = np.where(inside & ~exact, h / dist, 0.0)
    total = w.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = (w @ fy) / total
    on_point = exact.any(axis=1)
    if np.any(on_point):
        est[on_point] = fy[np.argmax(exact[on_point], axis=1)]
    empty = ~on_point & (total <= 0)
    if np.any(empty):
        est[empty] = fy[np.argmin(dist[empty], axis=1)]
    return est, int(empty.sum())


def construct_implicit_lipdf(grid: FulcrumGrid, config: SmootherConfig):
    """Closure mapping an array of states to smoothed likelihoods."""
    if grid.likelihoods is None:
        raise ContractViolation("grid likelihoods are not set")

    def lipdf(states):
        return smooth_ensemble(states, grid, config)[0]

    return lipdf
