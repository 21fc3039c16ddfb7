"""Least-squares power-law fits on log-log data, shared by the verification
sweeps (oscillation decay, concentration scalings, commutator convergence)."""

from __future__ import annotations

import math

import numpy as np


def fit_loglog(x, y) -> float:
    """Slope of log(y) against log(x).

    Points with y <= 0 are dropped (exact cancellations); if fewer than two
    positive points remain the decay is treated as instantaneous and -inf is
    returned.  Requires at least 3 x-values overall.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size:
        raise ValueError("x and y length mismatch")
    if x.size < 3:
        raise ValueError("need at least 3 points for a rate fit")
    keep = y > 0.0
    if keep.sum() < 2:
        return -math.inf
    slope, _ = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope)


def slope_stderr(x, y) -> tuple[float, float]:
    """Least-squares slope of y vs x with its standard error (linear scale)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 3:
        raise ValueError("need at least 3 points")
    xm = x - x.mean()
    sxx = float((xm ** 2).sum())
    if sxx == 0.0:
        raise ValueError("degenerate abscissa")
    slope = float((xm * y).sum() / sxx)
    resid = y - y.mean() - slope * xm
    var = float((resid ** 2).sum()) / (n - 2)
    return slope, math.sqrt(var / sxx)
