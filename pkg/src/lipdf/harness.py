"""Config-driven experiment runner: 1-D benchmark, localization and fit demo.

Metric CSVs are byte-deterministic for a given config and seed. Wall-clock
timings live in a separate table so they do not break that property.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from lipdf.baselines import gpf_step, sir_step
from lipdf.errors import ConfigError
from lipdf.filter import ActivationConfig, LipdfConfig, LipdfState, lipdf_step
from lipdf.fitting import BasisSpec, compose_gaussian_likelihood, evaluate_fit, least_squares_fit
from lipdf.grid import GridSpec
from lipdf.metrics import euclidean_error, rmse
from lipdf.models.mcl import MclModel, load_world
from lipdf.models.ugm import UgmParams, UnivariateGrowthModel, ugm_observe
from lipdf.smoother import SmootherConfig
from lipdf.ssm import CountingModel, ParticleEnsemble, StateSpaceModel

log = logging.getLogger(__name__)

EXPERIMENTS = ("bench1d", "mcl", "fit-demo")
FILTERS = ("sir", "gpf", "lipdf", "lipdf-batch")

DEFAULTS: dict[str, Any] = {
    "experiment": "bench1d",
    "filter": "sir",
    "particles": [200],
    "fulcrums": None,
    "steps": None,
    "trials": 20,
    "seed": 0,
    "scan_lines": 36,
    "world": None,
    "vectorized": False,
    "resample_threshold": 0.5,
    "resampler": "systematic",
    "lipdf": {},
    "ugm": {},
    "fit_demo": {},
}

LIPDF_1D = {
    "variant": "explicit",
    "basis": {"kind": "monomial", "order": 2},
    "margin_scale": 1.0,
    "noise_scale": [1.0],
    "resolution": 1.0,
    "sigma": 1.0,
    "fulcrum_observations": "simulated",
    "batch_samples": 100,
    "warmup_steps": 0,
    "spread_threshold": None,
}

LIPDF_MCL = {
    "variant": "implicit",
    "margin_scale": 1.0,
    "noise_scale": [1.0],
    "active_dims": [0, 1],
    "circular_dims": [2],
    "smoother": {"kernel": "nn", "neighbor_count": 4, "bandwidth": None},
}

FIT_DEMO = {
    "fulcrum_counts": [5, 10, 30, 50],
    "x_range": [-20.0, 20.0],
    "samples": 100,
    "dense_points": 201,
}


@dataclass
class ExperimentConfig:
    experiment: str = "bench1d"
    filter: str = "sir"
    particles: list[int] = field(default_factory=lambda: [200])
    fulcrums: int | None = None
    steps: int | None = None
    trials: int = 20
    seed: int = 0
    scan_lines: int = 36
    world: str | None = None
    vectorized: bool = False
    resample_threshold: float = 0.5
    resampler: str = "systematic"
    lipdf: dict = field(default_factory=dict)
    ugm: dict = field(default_factory=dict)
    fit_demo: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError("experiment", f"expected one of {EXPERIMENTS}")
        if self.filter not in FILTERS:
            raise ConfigError("filter", f"expected one of {FILTERS}")
        if isinstance(self.particles, int):
            self.particles = [self.particles]
        self.particles = [int(n) for n in self.particles]
        for name in ("trials", "scan_lines"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if not self.particles or min(self.particles) < 1:
            raise ConfigError("particles", "counts must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("steps", "must be >= 1")
        if self.fulcrums is not None and self.fulcrums < 1:
            raise ConfigError("fulcrums", "must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed", "must be a 64-bit unsigned integer")
        if self.world is not None and not Path(self.world).is_file():
            raise ConfigError("world", f"file not found: {self.world}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config key")
        merged = copy.deepcopy(DEFAULTS)
        merged.update({k: v for k, v in data.items() if v is not None or k in ("fulcrums", "world")})
        return cls(**merged)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be a mapping")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def echo(self) -> dict:
        """Flat ``{key: value}`` view for CSV config columns."""
        flat = {}
        for key in DEFAULTS:
            value = getattr(self, key)
            if isinstance(value, dict):
                for sub, v in _flatten(value).items():
                    flat[f"{key}.{sub}"] = v
            elif isinstance(value, list):
                flat[key] = " ".join(str(v) for v in value)
            else:
                flat[key] = value
        return flat


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            out[key] = " ".join(str(x) for x in v)
        else:
            out[key] = v
    return out


@dataclass
class ExperimentReport:
    config: dict
    records: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)
    timings: list[dict] = field(default_factory=list)
    curves: list[dict] = field(default_factory=list)
    samples: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------- filters

def lipdf_config_for(cfg: ExperimentConfig, model: StateSpaceModel) -> LipdfConfig:
    """Translate the experiment's ``lipdf`` section into a :class:`LipdfConfig`."""
    is_mcl = isinstance(model, MclModel) or isinstance(getattr(model, "inner", None), MclModel)
    base = copy.deepcopy(LIPDF_MCL if is_mcl else LIPDF_1D)
    base.update(copy.deepcopy(cfg.lipdf))
    if cfg.filter == "lipdf-batch":
        base["variant"] = "batch"
    state_dim = model.state_dim
    counts = base.get("counts")
    if cfg.fulcrums is not None:
        active = base.get("active_dims") or list(range(state_dim))
        counts = [cfg.fulcrums if d in active else 1 for d in range(state_dim)]
    basis = base.get("basis")
    smoother = base.get("smoother") or {}
    threshold = base.get("spread_threshold")
    warmup = base.get("warmup_steps", 0)
    if is_mcl:
        world = model.world
        threshold = base.get("spread_threshold", world.spread_threshold)
        warmup = base.get("warmup_steps", world.warmup_steps)
    if threshold is not None and not isinstance(threshold, (list, tuple)):
        threshold = [threshold]
    try:
        return LipdfConfig(
            variant=base["variant"],
            grid=GridSpec(
                margin_scale=float(base.get("margin_scale", 1.0)),
                noise_scale=tuple(base.get("noise_scale", [1.0])),
                resolution=float(base.get("resolution", 1.0)),
                counts=counts,
                active_dims=base.get("active_dims"),
                circular_dims=tuple(base.get("circular_dims", ())),
            ),
            basis=BasisSpec(basis["kind"], int(basis["order"])) if basis else None,
            sigma=float(base.get("sigma", 1.0)),
            smoother=SmootherConfig(**smoother),
            activation=ActivationConfig(
                spread_threshold=None if threshold is None else tuple(float(v) for v in threshold),
                warmup_steps=int(warmup),
            ),
            fulcrum_observations=base.get("fulcrum_observations", "auto"),
            batch_samples=int(base.get("batch_samples", 100)),
            batch_step=int(base.get("batch_step", 1)),
            batch_refit_every=base.get("batch_refit_every"),
            resample_threshold=cfg.resample_threshold,
            resampler=cfg.resampler,
            vectorized=cfg.vectorized,
            enabled=bool(base.get("enabled", True)),
        )
    except TypeError as exc:
        raise ConfigError("lipdf", str(exc)) from None


@dataclass
class FilterRun:
    estimates: np.ndarray
    reports: list


def run_filter(model: StateSpaceModel, observations, kind: str, n: int, rng: np.random.Generator,
               *, lipdf_config: LipdfConfig | None = None, resample_threshold: float = 0.5,
               resampler: str = "systematic", vectorized: bool = False,
               initial: np.ndarray | None = None) -> FilterRun:
    """Filter an observation sequence (``t = 1..T``) from a fresh prior ensemble."""
    particles = model.sample_initial(n, rng) if initial is None else initial
    ens = ParticleEnsemble.uniform(particles)
    state = LipdfState()
    estimates, reports = [], []
    for t, y in enumerate(observations, start=1):
        if kind == "sir":
            ens, rep = sir_step(ens, model, y, t, rng, resample_threshold=resample_threshold,
                                resampler=resampler, vectorized=vectorized)
        elif kind == "gpf":
            ens, rep = gpf_step(ens, model, y, t, rng, vectorized=vectorized)
        elif kind in ("lipdf", "lipdf-batch"):
            ens, rep = lipdf_step(ens, model, y, t, lipdf_config, rng, state)
        else:
            raise ConfigError("filter", f"unknown filter {kind!r}")
        estimates.append(rep.estimate)
        reports.append(rep)
    return FilterRun(np.array(estimates), reports)


def trial_rngs(seed: int, trial: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (truth, filter) streams; truth depends only on seed and trial."""
    truth = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, 0)))
    filt = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial, 1)))
    return truth, filt


def _timing_row(base: dict, reports) -> dict:
    return {
        **base,
        "time_total": sum(r.wall_time_total for r in reports),
        "time_update": sum(r.wall_time_update for r in reports),
        "time_predict": sum(r.wall_time_predict for r in reports),
        "time_resample": sum(r.wall_time_resample for r in reports),
    }


def _calls(r) -> int:
    return getattr(r, "model_likelihood_calls", r.likelihood_calls)


# ---------------------------------------------------------------- experiments

def run_bench1d(cfg: ExperimentConfig) -> ExperimentReport:
    """Growth-model benchmark: one truth trajectory per trial, RMSE per (N, trial)."""
    if cfg.experiment != "bench1d":
        raise ConfigError("experiment", "run_bench1d needs experiment=bench1d")
    steps = cfg.steps or 10000
    try:
        params = UgmParams(**cfg.ugm)
    except (TypeError, ValueError) as exc:
        raise ConfigError("ugm", str(exc)) from None
    report = ExperimentReport(cfg.echo())
    for n in cfg.particles:
        rmses = []
        for trial in range(cfg.trials):
            truth_rng, filt_rng = trial_rngs(cfg.seed, trial)
            model = CountingModel(UnivariateGrowthModel(params))
            xs, ys = model.inner.simulate(steps, truth_rng)
            lcfg = lipdf_config_for(cfg, model) if cfg.filter.startswith("lipdf") else None
            run = run_filter(model, ys, cfg.filter, n, filt_rng, lipdf_config=lcfg,
                             resample_threshold=cfg.resample_threshold, resampler=cfg.resampler,
                             vectorized=cfg.vectorized)
            err = rmse(xs, run.estimates[:, 0])
            rmses.append(err)
            reported = sum(_calls(r) for r in run.reports)
            base = {"particles": n, "trial": trial}
            report.records.append({
                **base,
                "rmse": err,
                "model_calls": model.model_calls,
                "reported_calls": reported,
                "active_steps": sum(bool(getattr(r, "lipdf_active", False)) for r in run.reports),
                "resampled_steps": sum(r.resampled for r in run.reports),
                "degenerate_steps": sum(r.degeneracy_flag for r in run.reports),
            })
            report.timings.append(_timing_row(base, run.reports))
            log.info("bench1d N=%d trial=%d rmse=%.4f", n, trial, err)
        report.summary.append({
            "particles": n,
            "trials": cfg.trials,
            "rmse_mean": float(np.mean(rmses)),
            "rmse_std": float(np.std(rmses)),
        })
    return report


def run_mcl(cfg: ExperimentConfig) -> ExperimentReport:
    """Localization along the world's waypoint path; Euclidean error per step."""
    if cfg.experiment != "mcl":
        raise ConfigError("experiment", "run_mcl needs experiment=mcl")
    world = load_world(cfg.world)
    report = ExperimentReport(cfg.echo())
    for n in cfg.particles:
        means, lost = [], 0
        for trial in range(cfg.trials):
            truth_rng, filt_rng = trial_rngs(cfg.seed, trial)
            model = CountingModel(MclModel(world, cfg.scan_lines))
            truth, scans = model.inner.simulate(truth_rng)
            if cfg.steps is not None:
                truth, scans = truth[:cfg.steps], scans[:cfg.steps]
            lcfg = lipdf_config_for(cfg, model) if cfg.filter.startswith("lipdf") else None
            run = run_filter(model, scans, cfg.filter, n, filt_rng, lipdf_config=lcfg,
                             resample_threshold=cfg.resample_threshold, resampler=cfg.resampler,
                             vectorized=cfg.vectorized)
            eds = [euclidean_error(x, e) for x, e in zip(truth, run.estimates)]
            for t, (ed, rep) in enumerate(zip(eds, run.reports), start=1):
                report.records.append({
                    "particles": n,
                    "trial": trial,
                    "step": t,
                    "ed": ed,
                    "lipdf_active": int(bool(getattr(rep, "lipdf_active", False))),
                    "model_calls": _calls(rep),
                    "degenerate": int(rep.degeneracy_flag),
                })
            first = world.warmup_steps + 1
            mean_ed = float(np.mean(eds[first - 1:])) if len(eds) >= first else float(np.mean(eds))
            is_lost = any(r.degeneracy_flag for r in run.reports)
            lost += is_lost
            means.append(mean_ed)
            active_updates = [r.wall_time_update for r in run.reports
                              if getattr(r, "lipdf_active", False)]
            report.timings.append({
                **_timing_row({"particles": n, "trial": trial}, run.reports),
                "time_update_active": sum(active_updates),
                # robust summaries; the minimum best estimates intrinsic cost on a noisy CPU
                "time_update_active_median": float(np.median(active_updates)) if active_updates
                else float("nan"),
                "time_update_active_min": min(active_updates, default=float("nan")),
                "active_steps": len(active_updates),
                "model_calls": model.model_calls,
                "reported_calls": sum(_calls(r) for r in run.reports),
            })
            report.curves.append({
                "particles": n,
                "trial": trial,
                "mean_ed": mean_ed,
                "ed_first": eds[min(first, len(eds)) - 1],
                "ed_last": eds[-1],
                "lost": int(is_lost),
            })
        report.summary.append({
            "particles": n,
            "trials": cfg.trials,
            "mean_ed": float(np.mean(means)),
            "std_ed": float(np.std(means)),
            "lost_trials": lost,
        })
    return report


def run_fit_demo(cfg: ExperimentConfig) -> ExperimentReport:
    """Fit noisy growth-model observations on fulcrum lattices of several sizes.

    Records hold one coefficient row per (basis, fulcrum count); curves hold
    the fitted functions on a dense grid next to the noiseless truth.
    """
    if cfg.experiment != "fit-demo":
        raise ConfigError("experiment", "run_fit_demo needs experiment=fit-demo")
    opts = {**FIT_DEMO, **cfg.fit_demo}
    lo, hi = (float(v) for v in opts["x_range"])
    if not hi > lo:
        raise ConfigError("fit_demo.x_range", "must be increasing")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    obs_std = math.sqrt(float(cfg.ugm.get("obs_var", 1.0)))
    report = ExperimentReport(cfg.echo())
    bases = {"trinomial": BasisSpec("polynomial", 2), "monomial": BasisSpec("monomial", 2)}
    dense = np.linspace(lo, hi, int(opts["dense_points"]))
    sample_x = rng.uniform(lo, hi, int(opts["samples"]))
    sample_y = ugm_observe(sample_x, obs_std * rng.standard_normal(sample_x.size))
    curves = {"x": dense, "truth": ugm_observe(dense)}
    pooled_rss, pooled_dof = 0.0, 0
    for m in opts["fulcrum_counts"]:
        x = np.linspace(lo, hi, int(m))
        y = ugm_observe(x, obs_std * rng.standard_normal(x.size))
        for name, basis in bases.items():
            fit = least_squares_fit(x, y, basis)
            coef = np.zeros(3)
            if basis.kind == "monomial":
                coef[2] = fit.coefficients[0]
            else:
                coef[:] = fit.coefficients
            report.records.append({
                "basis": name,
                "fulcrums": int(m),
                "c1": coef[0],
                "c2": coef[1],
                "c3": coef[2],
                "residual_norm": fit.residual_norm,
                "rms_residual": fit.rms_residual,
                "residual_std": fit.residual_std,
            })
            curves[f"{name}_{m}"] = evaluate_fit(fit, dense, warn=False)
            if name == "trinomial":
                pooled_rss += fit.residual_norm ** 2
                pooled_dof += fit.n_points - basis.n_params
    report.summary.append({
        "pooled_trinomial_residual_std": math.sqrt(pooled_rss / pooled_dof) if pooled_dof else float("nan"),
        "samples": sample_x.size,
    })
    report.curves = [{k: float(v[i]) for k, v in curves.items()} for i in range(dense.size)]
    # noisy samples kept for plotting next to the fits
    report.samples = [{"x": float(a), "y": float(b)} for a, b in zip(sample_x, sample_y)]
    return report


RUNNERS = {"bench1d": run_bench1d, "mcl": run_mcl, "fit-demo": run_fit_demo}


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    return RUNNERS[cfg.experiment](cfg)


# ---------------------------------------------------------------- output

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def emit_csv(report: ExperimentReport, path, table: str = "records") -> Path:
    """Write one report table as CSV: config columns first, then metric columns.

    Metric columns keep first-seen order across rows. Floats are written with
    ``repr`` so they round-trip exactly.
    """
    rows = getattr(report, table)
    config_cols = list(report.config)
    metric_cols: list[str] = []
    for row in rows:
        for key in row:
            if key not in metric_cols:
                metric_cols.append(key)
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
            writer.writerow([f"config.{c}" for c in config_cols] + metric_cols)
            for row in rows:
                writer.writerow([_fmt(report.config[c]) for c in config_cols]
                                + [_fmt(row.get(c)) for c in metric_cols])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def emit_all(report: ExperimentReport, path) -> list[Path]:
    """Records to ``path``; summary, timings, curves and samples to sibling files."""
    path = Path(path)
    written = [emit_csv(report, path, "records")]
    for table in ("summary", "timings", "curves", "samples"):
        if getattr(report, table, None):
            written.append(emit_csv(report, path.with_name(f"{path.stem}.{table}{path.suffix}"), table))
    return written
