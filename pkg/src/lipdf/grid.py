"""Fulcrum lattices covering the particle cloud.

Each active dimension is bounded by the particle hull widened by a margin
``r = a * sqrt(Q)``, split into ``M`` equally spaced coordinates, and the
fulcrums are the cross product of those coordinates. Dimensions that are
not partitioned are pinned at the ensemble's weighted mean.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

from lipdf.baselines import check_likelihoods
from lipdf.errors import ConfigError, ContractViolation, GridTooLarge
from lipdf.ssm import ParticleEnsemble, StateSpaceModel, circular_weighted_mean, weighted_mean_estimate

DEFAULT_MAX_POINTS = 1_000_000


@dataclass(frozen=True)
class GridSpec:
    """How to lay out the fulcrum lattice.

    Parameters
    ----------
    margin_scale : float
        ``a`` in ``r = a * sqrt(Q)``.
    noise_scale : sequence of float
        Per-dimension noise scale ``Q`` (state units squared).
    resolution : float
        ``lambda`` in the count rule ``ceil(|I| / (2 lambda) / sqrt(Q))``.
    counts : sequence of int or None, optional
        Per-dimension count override ``p``. A count of 1 leaves the
        dimension unpartitioned.
    active_dims : sequence of int, optional
        Dimensions to partition; all by default.
    circular_dims : sequence of int
        Angular dimensions; pinned with the circular mean.
    max_points : int
        Refuse lattices larger than this.
    """

    margin_scale: float = 1.0
    noise_scale: Sequence[float] = (1.0,)
    resolution: float = 1.0
    counts: Sequence[int | None] | None = None
    active_dims: Sequence[int] | None = None
    circular_dims: Sequence[int] = ()
    max_points: int = DEFAULT_MAX_POINTS

    def __post_init__(self):
        if not self.resolution > 0:
            raise ConfigError("resolution", "must be > 0")
        if self.margin_scale < 0:
            raise ConfigError("margin_scale", "must be >= 0")
        if self.counts is not None and any(c is not None and c < 1 for c in self.counts):
            raise ConfigError("counts", "overrides must be >= 1")

    def _per_dim(self, values, dim: int):
        if values is None:
            return None
        values = list(values)
        if len(values) == 1:
            return values[0]
        return values[dim]

    def q(self, dim: int) -> float:
        q = float(self._per_dim(self.noise_scale, dim))
        if not q > 0:
            raise ConfigError("noise_scale", f"dimension {dim} must be > 0")
        return q

    def count_override(self, dim: int) -> int | None:
        return self._per_dim(self.counts, dim)

    def partitioned_dims(self, state_dim: int) -> tuple[int, ...]:
        dims = range(state_dim) if self.active_dims is None else self.active_dims
        return tuple(d for d in dims if self.count_override(d) != 1)


@dataclass
class FulcrumGrid:
    """A built lattice of fulcrums.

    ``points`` holds full state vectors ordered by lattice index (C order over
    ``axes``). ``likelihoods`` and ``observations`` are filled by scoring.
    """

    bounds: np.ndarray
    counts: tuple[int, ...]
    spacing: np.ndarray
    active_dims: tuple[int, ...]
    axes: list[np.ndarray]
    points: np.ndarray
    likelihoods: np.ndarray | None = None
    observations: np.ndarray | None = None
    fitted: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def active_points(self) -> np.ndarray:
        return self.points[:, list(self.active_dims)]

    def rows(self):
        """CSV-ready rows: lattice index, state coordinates, then any scored columns."""
        dim = self.points.shape[1]
        header = ["index"] + [f"x{d}" for d in range(dim)]
        cols = []
        for name, arr in (("likelihood", self.likelihoods), ("observation", self.observations),
                          ("fitted_likelihood", self.fitted)):
            if arr is not None:
                header.append(name)
                cols.append(np.asarray(arr).reshape(self.size, -1)[:, 0])
        body = []
        for m in range(self.size):
            body.append([m] + [repr(float(v)) for v in self.points[m]]
                        + [repr(float(c[m])) for c in cols])
        return header, body

    def to_csv(self, path) -> None:
        header, body = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(body)


def bounding_interval(ensemble: ParticleEnsemble, dim: int, spec: GridSpec) -> tuple[float, float]:
    """Particle hull along ``dim`` widened by ``a * sqrt(Q[dim])`` on both sides."""
    coords = ensemble.particles[:, dim]
    r = spec.margin_scale * math.sqrt(spec.q(dim))
    return float(coords.min() - r), float(coords.max() + r)


def points_per_dimension(interval: tuple[float, float], spec: GridSpec, dim: int) -> int:
    override = spec.count_override(dim)
    if override is not None:
        return int(override)
    length = interval[1] - interval[0]
    m = math.ceil(length / (2.0 * spec.resolution) / math.sqrt(spec.q(dim)))
    return max(m, 2)


def build_grid(ensemble: ParticleEnsemble, spec: GridSpec) -> FulcrumGrid:
    """Lay out the fulcrum lattice over the current particle cloud.

    Raises
    ------
    GridTooLarge
        If the product of per-dimension counts exceeds ``spec.max_points``.
    """
    dims = spec.partitioned_dims(ensemble.dim)
    if not dims:
        raise ConfigError("active_dims", "no dimension is partitioned")
    bounds, counts, spacing, axes = [], [], [], []
    for d in dims:
        lo, hi = bounding_interval(ensemble, d, spec)
        if hi <= lo:
            # zero margin on a collapsed cloud; widen so spacing stays positive
            pad = 0.5e-6 * max(1.0, abs(lo))
            lo, hi = lo - pad, hi + pad
        m = points_per_dimension((lo, hi), spec, d)
        m = max(m, 2)
        step = (hi - lo) / (m - 1)
        axis = lo + np.arange(m) * step
        bounds.append((lo, hi))
        counts.append(m)
        spacing.append(step)
        axes.append(axis)
    total = math.prod(counts)
    if total > spec.max_points:
        raise GridTooLarge(total, spec.max_points)

    mean = weighted_mean_estimate(ensemble)
    for d in spec.circular_dims:
        mean[d] = circular_weighted_mean(ensemble.particles[:, d], ensemble.weights)
    points = np.tile(mean, (total, 1))
    mesh = np.meshgrid(*axes, indexing="ij")
    for d, coords in zip(dims, mesh):
        points[:, d] = coords.reshape(-1)
    return FulcrumGrid(
        bounds=np.array(bounds, dtype=float),
        counts=tuple(counts),
        spacing=np.array(spacing, dtype=float),
        active_dims=tuple(dims),
        axes=axes,
        points=points,
    )


def evaluate_fulcrums(grid: FulcrumGrid, model: StateSpaceModel, y,
                      vectorized: bool = False) -> FulcrumGrid:
    """Score every fulcrum with the model likelihood: exactly ``grid.size`` model calls."""
    if vectorized:
        values = np.asarray(model.likelihood_batch(grid.points, y), dtype=float)
    else:
        values = np.array([model.likelihood(x, y) for x in grid.points], dtype=float)
    return replace(grid, likelihoods=check_likelihoods(values))


def observe_fulcrums(grid: FulcrumGrid, model: StateSpaceModel, rng: np.random.Generator,
                     source: str = "auto", vectorized: bool = False) -> FulcrumGrid:
    """Attach one observation per fulcrum.

    ``source`` is ``"noiseless"`` (model observation map), ``"simulated"``
    (one noisy draw per fulcrum) or ``"auto"`` (noiseless when the model
    exposes a map).
    """
    if source == "auto":
        source = "noiseless" if model.has_observation_map else "simulated"
    if source == "noiseless":
        obs = np.asarray(model.observation_map(grid.points), dtype=float)
    elif source == "simulated":
        if vectorized:
            obs = np.asarray(model.observe_batch(grid.points, rng), dtype=float)
        else:
            obs = np.array([model.observe(x, rng) for x in grid.points], dtype=float)
    else:
        raise ConfigError("fulcrum_observations", f"unknown source {source!r}")
    return replace(grid, observations=obs)


@dataclass
class Neighbors:
    indices: np.ndarray
    points: np.ndarray
    likelihoods: np.ndarray
    distances: np.ndarray
    fallback: bool = False

    def __iter__(self):
        return iter(zip(self.points, self.likelihoods, self.distances))

    def __len__(self):
        return len(self.indices)


def fulcrum_distances(grid: FulcrumGrid, queries: np.ndarray) -> np.ndarray:
    """Euclidean distances over active dims, shape ``(len(queries), grid.size)``."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))[:, list(grid.active_dims)]
    return cdist(q, grid.active_points)


def nearest_fulcrums(grid: FulcrumGrid, query, count: int | None = None,
                     radius: float | None = None) -> Neighbors:
    """The ``count`` closest fulcrums, or all within ``radius``.

    Ties are broken by ascending lattice index. A radius query that finds
    nothing falls back to the single nearest fulcrum and sets ``fallback``.
    """
    if grid.likelihoods is None:
        raise ContractViolation("grid likelihoods are not set")
    if (count is None) == (radius is None):
        raise ContractViolation("give exactly one of count or radius")
    dist = fulcrum_distances(grid, query)[0]
    order = np.argsort(dist, kind="stable")
    fallback = False
    if count is not None:
        idx = order[:count]
    else:
        idx = order[dist[order] <= radius]
        if idx.size == 0:
            idx = order[:1]
            fallback = True
    return Neighbors(idx, grid.points[idx], grid.likelihoods[idx], dist[idx], fallback)
