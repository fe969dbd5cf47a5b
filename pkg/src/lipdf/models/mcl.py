"""Planar Monte Carlo localization world with a range scanner.

The robot state is ``(x, y, theta)``. The map is a rectangular arena with
axis-aligned rectangular obstacles; range readings come from ray casting
against the arena walls and obstacles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from lipdf.errors import ConfigError
from lipdf.ssm import StateSpaceModel

WORLD_SCHEMA_VERSION = 1
_LOG_2PI = math.log(2.0 * math.pi)


def wrap_angle(theta):
    """Wrap to [-pi, pi)."""
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ConfigError("obstacles", f"degenerate rectangle {self}")

    def contains(self, x, y):
        return (x >= self.xmin) & (x <= self.xmax) & (y >= self.ymin) & (y <= self.ymax)


@dataclass
class OccupancyMap:
    """Arena ``[0, width] x [0, height]`` with rectangular obstacles."""

    width: float
    height: float
    obstacles: list[Rect] = field(default_factory=list)

    def __post_init__(self):
        for r in self.obstacles:
            if r.xmin < 0 or r.ymin < 0 or r.xmax > self.width or r.ymax > self.height:
                raise ConfigError("obstacles", f"{r} lies outside the arena")
        boxes = np.array([[r.xmin, r.ymin, r.xmax, r.ymax] for r in self.obstacles],
                         dtype=float).reshape(-1, 4)
        self._boxes = boxes

    @property
    def max_range(self) -> float:
        return math.hypot(self.width, self.height)

    def is_free(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        free = (x >= 0) & (x <= self.width) & (y >= 0) & (y <= self.height)
        for r in self.obstacles:
            free &= ~r.contains(x, y)
        return free

    def translated(self, dx: float, dy: float, pad: float | None = None) -> "OccupancyMap":
        """The same map shifted by ``(dx, dy)`` inside a larger arena.

        Only valid for nonnegative shifts; used to check translation invariance.
        """
        obstacles = [Rect(r.xmin + dx, r.ymin + dy, r.xmax + dx, r.ymax + dy)
                     for r in self.obstacles]
        # the old walls become obstacles bordering the shifted region
        w, h = self.width, self.height
        t = 1.0 if pad is None else pad
        walls = [
            Rect(dx - t, dy - t, dx + w + t, dy),
            Rect(dx - t, dy + h, dx + w + t, dy + h + t),
            Rect(dx - t, dy, dx, dy + h),
            Rect(dx + w, dy, dx + w + t, dy + h),
        ]
        return OccupancyMap(w + dx + 2 * t, h + dy + 2 * t, obstacles + walls)


def cast_rays(world: OccupancyMap, ox, oy, angles, max_range: float | None = None) -> np.ndarray:
    """Distance from each origin along each heading to the first wall or obstacle.

    ``ox``, ``oy`` and ``angles`` broadcast together. Origins must be in free space.
    """
    ox, oy, angles = np.broadcast_arrays(np.asarray(ox, dtype=float),
                                         np.asarray(oy, dtype=float),
                                         np.asarray(angles, dtype=float))
    dx = np.cos(angles)
    dy = np.sin(angles)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (world.width - ox) / dx, np.where(dx < 0, -ox / dx, np.inf))
        ty = np.where(dy > 0, (world.height - oy) / dy, np.where(dy < 0, -oy / dy, np.inf))
        best = np.minimum(tx, ty)
        boxes = world._boxes
        if boxes.shape[0]:
            o_x, o_y = ox[..., None], oy[..., None]
            d_x, d_y = dx[..., None], dy[..., None]
            xmin, ymin, xmax, ymax = boxes.T
            lo_x, hi_x = _slab(o_x, d_x, xmin, xmax)
            lo_y, hi_y = _slab(o_y, d_y, ymin, ymax)
            t_enter = np.maximum(lo_x, lo_y)
            t_exit = np.minimum(hi_x, hi_y)
            hit = (t_enter <= t_exit) & (t_exit > 0)
            t_hit = np.where(hit, np.maximum(t_enter, 0.0), np.inf)
            best = np.minimum(best, t_hit.min(axis=-1))
    limit = world.max_range if max_range is None else max_range
    return np.minimum(best, limit)


def _slab(o, d, lo, hi):
    inside = (o >= lo) & (o <= hi)
    t1 = (lo - o) / d
    t2 = (hi - o) / d
    parallel = d == 0
    near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return near, far


@dataclass
class ScanObservation:
    ranges: np.ndarray
    blocked: bool = False

    @property
    def n(self) -> int:
        return self.ranges.shape[0]


def scan_angles(theta: float, n: int) -> np.ndarray:
    return theta + 2.0 * np.pi * np.arange(n) / n


def simulate_scan(state, world: OccupancyMap, n: int, rng: np.random.Generator | None = None,
                  noise_var: float = 5.0, max_range: float | None = None) -> ScanObservation:
    """Range scan of ``n`` rays at bearings ``theta + 2 pi k / n``.

    Gaussian noise of variance ``noise_var`` is added when ``rng`` is given;
    ranges are clipped to ``[0, max_range]``. A pose inside an obstacle or
    outside the arena yields an all-zero, blocked scan.
    """
    x, y, theta = (float(v) for v in state)
    limit = world.max_range if max_range is None else max_range
    if not world.is_free(x, y):
        return ScanObservation(np.zeros(n), blocked=True)
    ranges = cast_rays(world, x, y, scan_angles(theta, n), limit)
    if rng is not None and noise_var > 0:
        ranges = ranges + math.sqrt(noise_var) * rng.standard_normal(n)
    return ScanObservation(np.clip(ranges, 0.0, limit))


def scan_log_likelihood(predicted, observed, per_ray_var: float = 5.0) -> float:
    pred = predicted.ranges if isinstance(predicted, ScanObservation) else np.asarray(predicted)
    obs = observed.ranges if isinstance(observed, ScanObservation) else np.asarray(observed)
    if isinstance(predicted, ScanObservation) and predicted.blocked:
        return -math.inf
    if pred.shape != obs.shape:
        raise ValueError(f"scan sizes differ: {pred.shape} vs {obs.shape}")
    n = pred.shape[0]
    r = pred - obs
    return -0.5 * n * (_LOG_2PI + math.log(per_ray_var)) - 0.5 * float(r @ r) / per_ray_var


def scan_likelihood(predicted, observed, per_ray_var: float = 5.0) -> float:
    """Gaussian scan likelihood with diagonal covariance ``per_ray_var * I``.

    Evaluated in log space and exponentiated; blocked predictions score 0.
    """
    return math.exp(scan_log_likelihood(predicted, observed, per_ray_var))


def mcl_motion(state, control, rng: np.random.Generator | None = None, noise_on: bool = True,
               spread=(0.2, 0.05), noise: str = "uniform"):
    """Odometry motion: move ``ds`` along the current heading, then turn by ``dtheta``.

    With noise on, ``ds`` and ``dtheta`` are perturbed by zero-mean noise of
    spread ``spread[0] * |ds|`` and ``spread[1] * |dtheta|``: uniform on
    ``[-s, s]`` or Gaussian with standard deviation ``s``. Works on a single
    state ``(3,)`` or a particle array ``(N, 3)``.
    """
    s = np.asarray(state, dtype=float)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    ds, dtheta = (float(c) for c in control)
    n = s.shape[0]
    ds_i = np.full(n, ds)
    dth_i = np.full(n, dtheta)
    if noise_on and rng is not None:
        a, b = spread[0] * abs(ds), spread[1] * abs(dtheta)
        if noise == "uniform":
            ds_i = ds_i + rng.uniform(-a, a, n) if a > 0 else ds_i
            dth_i = dth_i + rng.uniform(-b, b, n) if b > 0 else dth_i
        elif noise == "gaussian":
            ds_i = ds_i + a * rng.standard_normal(n)
            dth_i = dth_i + b * rng.standard_normal(n)
        else:
            raise ConfigError("motion.noise", f"unknown noise type {noise!r}")
    out = np.empty_like(s)
    out[:, 0] = s[:, 0] + ds_i * np.cos(s[:, 2])
    out[:, 1] = s[:, 1] + ds_i * np.sin(s[:, 2])
    out[:, 2] = wrap_angle(s[:, 2] + dth_i)
    return out[0] if single else out


def euclidean_error(truth, est) -> float:
    return math.hypot(float(truth[0]) - float(est[0]), float(truth[1]) - float(est[1]))


@dataclass
class World:
    """A localization scenario: map, reference path and noise settings."""

    map: OccupancyMap
    waypoints: np.ndarray
    initial_halfwidth: tuple[float, float] = (3.0, 3.0)
    initial_heading_halfwidth: float = 0.2
    initial_offset: tuple[float, float] = (0.0, 0.0)
    motion_noise: str = "uniform"
    motion_spread: tuple[float, float] = (0.2, 0.05)
    scan_noise_var: float = 5.0
    spread_threshold: tuple[float, float] | None = None
    warmup_steps: int = 3
    name: str = "world"

    @property
    def steps(self) -> int:
        return self.waypoints.shape[0] - 1

    def headings(self) -> np.ndarray:
        d = np.diff(self.waypoints, axis=0)
        h = np.arctan2(d[:, 1], d[:, 0])
        return np.append(h, h[-1])

    def truth(self) -> np.ndarray:
        """Poses at ``t = 0..T``: each waypoint, facing the next one."""
        return np.column_stack([self.waypoints, self.headings()])

    def controls(self) -> np.ndarray:
        """``(ds, dtheta)`` taking pose ``t-1`` to pose ``t``; row ``t-1`` for ``t = 1..T``."""
        poses = self.truth()
        ds = np.hypot(*np.diff(poses[:, :2], axis=0).T)
        dth = wrap_angle(np.diff(poses[:, 2]))
        return np.column_stack([ds, dth])


def _pair(value, name):
    v = tuple(float(x) for x in (value if isinstance(value, (list, tuple)) else [value, value]))
    if len(v) != 2:
        raise ConfigError(name, "expects two values")
    return v


def world_from_dict(data: dict, name: str = "world") -> World:
    version = data.get("version")
    if version != WORLD_SCHEMA_VERSION:
        raise ConfigError("version", f"unsupported world schema version {version!r}")
    arena = data["arena"]
    world_map = OccupancyMap(float(arena["width"]), float(arena["height"]),
                             [Rect(*map(float, r)) for r in data.get("obstacles", [])])
    waypoints = np.asarray(data["waypoints"], dtype=float)
    if waypoints.ndim != 2 or waypoints.shape[1] != 2 or waypoints.shape[0] < 2:
        raise ConfigError("waypoints", "need at least two (x, y) points")
    if not np.all(world_map.is_free(waypoints[:, 0], waypoints[:, 1])):
        raise ConfigError("waypoints", "every waypoint must lie in free space")
    init = data.get("initial", {})
    motion = data.get("motion", {})
    scan = data.get("scan", {})
    act = data.get("activation", {})
    threshold = act.get("spread_threshold")
    return World(
        map=world_map,
        waypoints=waypoints,
        initial_halfwidth=_pair(init.get("halfwidth", 3.0), "initial.halfwidth"),
        initial_heading_halfwidth=float(init.get("heading_halfwidth", 0.2)),
        initial_offset=_pair(init.get("offset", [0.0, 0.0]), "initial.offset"),
        motion_noise=str(motion.get("noise", "uniform")),
        motion_spread=_pair(motion.get("spread", [0.2, 0.05]), "motion.spread"),
        scan_noise_var=float(scan.get("noise_var", 5.0)),
        spread_threshold=None if threshold is None else _pair(threshold, "activation.spread_threshold"),
        warmup_steps=int(act.get("warmup_steps", 3)),
        name=str(data.get("name", name)),
    )


def load_world(path: str | Path | None = None) -> World:
    """Read a world file; ``None`` loads the built-in default world."""
    if path is None:
        text = resources.files("lipdf.data").joinpath("default_world.yaml").read_text()
        return world_from_dict(yaml.safe_load(text), "default")
    path = Path(path)
    return world_from_dict(yaml.safe_load(path.read_text()), path.stem)


class MclModel(StateSpaceModel):
    """Localization in ``world`` with ``n`` scan lines.

    The transition at step ``t`` applies odometry control ``t``; the
    likelihood scores a pose by ray casting its expected scan, and poses in
    obstacles score 0.
    """

    state_dim = 3

    def __init__(self, world: World, n: int = 36, per_ray_var: float | None = None):
        self.world = world
        self.n = int(n)
        self.obs_dim = self.n
        self.per_ray_var = world.scan_noise_var if per_ray_var is None else per_ray_var
        self._controls = world.controls()
        self._offsets = 2.0 * np.pi * np.arange(self.n) / self.n
        self._log_norm = -0.5 * self.n * (_LOG_2PI + math.log(self.per_ray_var))

    def sample_initial(self, n, rng):
        w = self.world
        start = w.truth()[0].copy()
        start[:2] += w.initial_offset
        hx, hy = w.initial_halfwidth
        out = np.empty((0, 3))
        while out.shape[0] < n:
            m = 2 * (n - out.shape[0]) + 8
            cand = np.column_stack([
                start[0] + rng.uniform(-hx, hx, m),
                start[1] + rng.uniform(-hy, hy, m),
                wrap_angle(start[2] + rng.uniform(-w.initial_heading_halfwidth,
                                                  w.initial_heading_halfwidth, m)),
            ])
            cand = cand[w.map.is_free(cand[:, 0], cand[:, 1])]
            out = np.vstack([out, cand])
        return out[:n]

    def control(self, t: int) -> np.ndarray:
        return self._controls[t - 1]

    def transition(self, particles, t, rng):
        w = self.world
        return mcl_motion(particles, self.control(t), rng, True, w.motion_spread, w.motion_noise)

    def expected_scan(self, x) -> ScanObservation:
        return simulate_scan(x, self.world.map, self.n, None)

    def likelihood(self, x, y):
        if not self.world.map.is_free(x[0], x[1]):
            return 0.0
        pred = cast_rays(self.world.map, x[0], x[1], x[2] + self._offsets)
        r = pred - y
        return math.exp(self._log_norm - 0.5 * float(r @ r) / self.per_ray_var)

    def likelihood_batch(self, particles, y):
        p = np.asarray(particles, dtype=float)
        free = self.world.map.is_free(p[:, 0], p[:, 1])
        out = np.zeros(p.shape[0])
        if np.any(free):
            q = p[free]
            pred = cast_rays(self.world.map, q[:, :1], q[:, 1:2], q[:, 2:3] + self._offsets)
            r = pred - y
            out[free] = np.exp(self._log_norm - 0.5 * np.einsum("ij,ij->i", r, r) / self.per_ray_var)
        return out

    def observe(self, x, rng):
        return simulate_scan(x, self.world.map, self.n, rng, self.world.scan_noise_var).ranges

    def simulate(self, rng: np.random.Generator):
        """Truth poses for ``t = 1..T`` and their noisy scans."""
        truth = self.world.truth()[1:]
        scans = np.array([self.observe(x, rng) for x in truth])
        return truth, scans
