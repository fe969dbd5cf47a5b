"""Linear-in-parameters least-squares fitting of fulcrum data.

Fits are solved by column-equilibrated, column-pivoted QR rather than the
normal equations; monomial designs over wide fulcrum intervals are badly
conditioned.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from lipdf.errors import ConfigError, ContractViolation, RankDeficientError, UnderpopulatedInterval

LOG_FLOOR = 1e-300
_SQRT_2PI = math.sqrt(2.0 * math.pi)


class ExtrapolationWarning(UserWarning):
    """A fit was evaluated outside the interval its data covered."""


@dataclass(frozen=True)
class BasisSpec:
    """Basis functions for ``L(x) = sum_i c_i phi_i(x)``.

    ``kind`` is one of

    * ``"polynomial"``: ``1, x, ..., x**order`` (``order=2`` is the trinomial form)
    * ``"monomial"``: the single term ``x**order``
    * ``"custom"``: the callables in ``functions``
    """

    kind: str = "polynomial"
    order: int = 2
    functions: tuple[Callable[[np.ndarray], np.ndarray], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if self.kind not in ("polynomial", "monomial", "custom"):
            raise ConfigError("basis.kind", f"unknown basis kind {self.kind!r}")
        if self.kind == "custom" and not self.functions:
            raise ConfigError("basis.functions", "custom basis needs at least one function")
        if self.kind != "custom" and self.order < 0:
            raise ConfigError("basis.order", "must be >= 0")

    @classmethod
    def trinomial(cls) -> "BasisSpec":
        return cls("polynomial", 2)

    @property
    def n_params(self) -> int:
        if self.kind == "polynomial":
            return self.order + 1
        if self.kind == "monomial":
            return 1
        return len(self.functions)

    @property
    def column_names(self) -> list[str]:
        if self.kind == "polynomial":
            return [f"x^{i}" for i in range(self.order + 1)]
        if self.kind == "monomial":
            return [f"x^{self.order}"]
        return [getattr(f, "__name__", f"phi{i}") for i, f in enumerate(self.functions)]

    def design(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.kind == "polynomial":
            return x[:, None] ** np.arange(self.order + 1)
        if self.kind == "monomial":
            return (x ** self.order)[:, None]
        return np.column_stack([np.asarray(f(x), dtype=float) * np.ones_like(x)
                                for f in self.functions])


@dataclass
class FitResult:
    basis: BasisSpec
    coefficients: np.ndarray
    residual_norm: float
    rms_residual: float
    domain: tuple[float, float]
    n_points: int

    @property
    def residual_std(self) -> float:
        """Noise-std estimate ``sqrt(RSS / (M - k))``."""
        dof = self.n_points - self.basis.n_params
        return self.residual_norm / math.sqrt(dof) if dof > 0 else float("nan")

    def row(self) -> dict:
        return {
            "basis": self.basis.kind,
            "order": self.basis.order,
            "n_points": self.n_points,
            **{f"c{i + 1}": float(c) for i, c in enumerate(self.coefficients)},
            "residual_norm": self.residual_norm,
            "rms_residual": self.rms_residual,
        }


def _solve_lstsq(design: np.ndarray, y: np.ndarray, basis: BasisSpec) -> np.ndarray:
    scale = np.linalg.norm(design, axis=0)
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        raise RankDeficientError(basis.column_names[i] for i in zero)
    a = design / scale
    q, r, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(a.shape) * np.finfo(float).eps * diag[0]
    deficient = np.flatnonzero(diag <= tol)
    if deficient.size:
        raise RankDeficientError(basis.column_names[piv[i]] for i in deficient)
    z = scipy.linalg.solve_triangular(r, q.T @ y)
    coef = np.empty_like(z)
    coef[piv] = z
    return coef / scale


def least_squares_fit(x, y, basis: BasisSpec) -> FitResult:
    """Least-squares coefficients minimizing the 2-norm of the residuals.

    Parameters
    ----------
    x, y : array_like
        Fulcrum states and their values (likelihoods or observations).
    basis : BasisSpec

    Raises
    ------
    RankDeficientError
        If the design matrix loses rank; names the offending basis columns.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    k = basis.n_params
    if x.shape != y.shape:
        raise ContractViolation(f"{x.size} x values for {y.size} y values")
    if x.size < k + 1:
        raise ContractViolation(f"{x.size} points cannot fit {k} parameters (need >= {k + 1})")
    if np.all(x == x[0]):
        raise ContractViolation("x values are all identical")
    if x.size < 3 * k:
        warnings.warn(f"only {x.size} points for {k} parameters", RuntimeWarning, stacklevel=2)
    design = basis.design(x)
    coef = _solve_lstsq(design, y, basis)
    resid = y - design @ coef
    norm = float(np.linalg.norm(resid))
    return FitResult(
        basis=basis,
        coefficients=coef,
        residual_norm=norm,
        rms_residual=norm / math.sqrt(x.size),
        domain=(float(x.min()), float(x.max())),
        n_points=int(x.size),
    )


def evaluate_fit(fit: FitResult, x, warn: bool = True):
    """``sum_i c_i phi_i(x)``; scalar in, scalar out.

    Evaluation outside ``fit.domain`` still returns the value but issues an
    :class:`ExtrapolationWarning` unless ``warn`` is false.
    """
    scalar = np.ndim(x) == 0
    xs = np.asarray(x, dtype=float).reshape(-1)
    values = fit.basis.design(xs) @ fit.coefficients
    if warn and np.any(extrapolates(fit, xs)):
        warnings.warn(f"evaluating fit outside its domain {fit.domain}", ExtrapolationWarning,
                      stacklevel=2)
    return float(values[0]) if scalar else values


def extrapolates(fit: FitResult, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo, hi = fit.domain
    return (x < lo) | (x > hi)


@dataclass
class PiecewiseFit:
    join_points: np.ndarray
    segments: list[FitResult]

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        xs = np.asarray(x, dtype=float).reshape(-1)
        seg = np.clip(np.searchsorted(self.join_points, xs, side="right") - 1,
                      0, len(self.segments) - 1)
        out = np.empty_like(xs)
        for i, fit in enumerate(self.segments):
            mask = seg == i
            if np.any(mask):
                out[mask] = fit.basis.design(xs[mask]) @ fit.coefficients
        return float(out[0]) if scalar else out


def equal_joins(x, segments: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.linspace(x.min(), x.max(), segments + 1)


def piecewise_fit(x, y, basis: BasisSpec, join_points: Sequence[float] | int) -> PiecewiseFit:
    """Fit one segment per interval between consecutive join points.

    Points lying on a join belong to both neighbouring intervals. An integer
    ``join_points`` requests that many equal-width intervals. Each interval
    needs at least ``k + 2`` points.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    joins = equal_joins(x, join_points) if isinstance(join_points, int) else np.asarray(
        join_points, dtype=float)
    if joins.ndim != 1 or joins.size < 2 or np.any(np.diff(joins) <= 0):
        raise ContractViolation("join points must be strictly ascending, at least two")
    needed = basis.n_params + 2
    segments = []
    for i in range(joins.size - 1):
        lo, hi = joins[i], joins[i + 1]
        mask = (x >= lo) & (x <= hi)
        if mask.sum() < needed:
            raise UnderpopulatedInterval(i, lo, hi, int(mask.sum()), needed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            segments.append(least_squares_fit(x[mask], y[mask], basis))
    return PiecewiseFit(joins, segments)


def compose_gaussian_likelihood(obs_fit: FitResult, y_obs: float, sigma: float = 1.0):
    """Gaussian likelihood around a fitted observation function.

    Returns ``L(x) = exp(-(y_obs - g(x))**2 / (2 sigma**2)) / (sqrt(2 pi) sigma)``
    where ``g`` evaluates ``obs_fit``. Accepts scalars or arrays.
    """
    if not sigma > 0:
        raise ContractViolation("sigma must be > 0")
    norm = 1.0 / (_SQRT_2PI * sigma)
    two_var = 2.0 * sigma * sigma

    def likelihood(x):
        g = evaluate_fit(obs_fit, x, warn=False)
        return norm * np.exp(-((y_obs - g) ** 2) / two_var)

    return likelihood


def log_linearize(likelihoods) -> np.ndarray:
    """Natural log after flooring at 1e-300."""
    return np.log(np.maximum(np.asarray(likelihoods, dtype=float), LOG_FLOOR))


def lagrange_remainder_bound(deriv_bound: float, halfwidth: float, order: int) -> float:
    """Taylor truncation bound ``B * h**(n+1) / (n+1)!``."""
    if deriv_bound < 0 or halfwidth < 0 or order < 0:
        raise ContractViolation("bound, halfwidth and order must be nonnegative")
    return deriv_bound * halfwidth ** (order + 1) / math.factorial(order + 1)


@dataclass
class FitDiagnostics:
    rms_residual: float
    max_abs_residual: float
    r_squared: float
    r_squared_defined: bool = True


def fit_diagnostics(fit, x, y) -> FitDiagnostics:
    """Residual statistics of ``fit`` (a FitResult or PiecewiseFit) on data ``(x, y)``.

    With zero data variance, R² is 1 for a perfect fit and otherwise NaN with
    ``r_squared_defined`` false.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.size == 0:
        raise ContractViolation("no points")
    pred = fit(x) if callable(fit) else evaluate_fit(fit, x, warn=False)
    resid = y - np.asarray(pred).reshape(-1)
    ss_res = float(resid @ resid)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    rms = math.sqrt(ss_res / x.size)
    max_abs = float(np.max(np.abs(resid)))
    if ss_tot == 0.0:
        if ss_res == 0.0:
            return FitDiagnostics(rms, max_abs, 1.0)
        return FitDiagnostics(rms, max_abs, float("nan"), r_squared_defined=False)
    return FitDiagnostics(rms, max_abs, 1.0 - ss_res / ss_tot)
