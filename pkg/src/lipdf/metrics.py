"""Error metrics for benchmark runs."""

from __future__ import annotations

import numpy as np

from lipdf.errors import ContractViolation
from lipdf.models.mcl import euclidean_error

__all__ = ["rmse", "euclidean_error"]


def rmse(truth, estimates) -> float:
    """Root mean square of ``||x_t - x_hat_t||`` over the time series."""
    a = np.asarray(truth, dtype=float)
    b = np.asarray(estimates, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ContractViolation(f"length mismatch: {a.shape[0]} truths, {b.shape[0]} estimates")
    if a.shape[0] < 1:
        raise ContractViolation("empty series")
    d = (a - b).reshape(a.shape[0], -1)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
