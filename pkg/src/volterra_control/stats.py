"""Monte Carlo reductions (always in path-index order)."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np


class Estimate(NamedTuple):
    value: float
    std_error: float


def mean_se(samples) -> Estimate:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples for a standard error")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite Monte Carlo sample")
    return Estimate(float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(x.size)))


def ratio_se(num, den) -> Estimate:
    """``mean(num) / mean(den)`` with a delta-method standard error."""
    a = np.asarray(num, dtype=float).ravel()
    b = np.asarray(den, dtype=float).ravel()
    n = a.size
    ma, mb = a.mean(), b.mean()
    r = ma / mb
    resid = (a - r * b) / mb
    return Estimate(float(r), float(np.std(resid, ddof=1) / np.sqrt(n)))


def within(est: Estimate, target: float, n_se: float = 3.0, atol: float = 0.0) -> bool:
    return abs(est.value - target) <= n_se * est.std_error + atol
