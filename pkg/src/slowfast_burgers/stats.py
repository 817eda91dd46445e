"""Small statistical helpers shared by the experiment protocols."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

__all__ = ["mean_stderr", "median_stderr", "LogLogFit", "fit_loglog"]


def mean_stderr(samples):
    """Sample mean and its standard error."""
    s = np.asarray(samples, dtype=np.float64)
    n = s.size
    if n < 2:
        return float(s.mean()) if n else float("nan"), float("nan")
    return float(s.mean()), float(s.std(ddof=1) / np.sqrt(n))


def median_stderr(samples):
    """Sample median with the asymptotic-normal error 1.2533 * sd / sqrt(n)."""
    s = np.asarray(samples, dtype=np.float64)
    n = s.size
    if n < 2:
        return float(np.median(s)) if n else float("nan"), float("nan")
    return float(np.median(s)), float(1.2533 * s.std(ddof=1) / np.sqrt(n))


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    slope_stderr: float
    ci_low: float
    ci_high: float


def fit_loglog(xs, ys, confidence=0.95):
    """Least-squares slope of log y against log x with a t-interval."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    n = lx.size
    if n < 3:
        raise ValueError("need at least three points for a slope interval")
    A = np.vstack([lx, np.ones(n)]).T
    coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = ly - A @ coef
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    se = float(np.sqrt(np.sum(resid ** 2) / (n - 2) / sxx))
    tq = float(student_t.ppf(0.5 + confidence / 2.0, n - 2))
    return LogLogFit(slope, intercept, se, slope - tq * se, slope + tq * se)
