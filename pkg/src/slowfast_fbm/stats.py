"""Small statistics helpers: log-log slope fits and two-sample KS."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DomainError


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    halfwidth: float  # 95% confidence half-width of the slope

    @property
    def interval(self):
        return self.slope - self.halfwidth, self.slope + self.halfwidth


def fit_slope(x, y):
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise DomainError("fit_slope needs two matching arrays with at least 3 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("fit_slope needs positive data")
    res = stats.linregress(np.log(x), np.log(y))
    half = float(stats.t.ppf(0.975, x.size - 2) * res.stderr)
    return SlopeFit(float(res.slope), float(res.intercept), float(res.rvalue**2), half)


def ks_critical(n, m, alpha=0.01):
    """Asymptotic two-sample KS critical value at level alpha."""
    return math.sqrt(-math.log(alpha / 2) / 2) * math.sqrt((n + m) / (n * m))


def ks_two_sample(a, b):
    a = np.ravel(np.asarray(a, dtype=float))
    b = np.ravel(np.asarray(b, dtype=float))
    return float(stats.ks_2samp(a, b).statistic)
