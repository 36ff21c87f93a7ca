"""Small statistical toolbox used by the estimators and their tests.

Significance conventions (pre-registered in ``defaults``): two-sample KS at
1%, trend tests at 5%, mean comparisons at 3 standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


def logmeanexp(logw: np.ndarray, axis: int = -1) -> np.ndarray:
    """log of the mean of exp(logw), max-shifted.

    Shifted terms are summed in ascending order so the result is invariant
    (to ~1e-15 relative) under permutation of the replicas.
    """
    logw = np.asarray(logw, dtype=float)
    m = np.max(logw, axis=axis, keepdims=True)
    shifted = np.exp(logw - m)
    shifted = np.sort(shifted, axis=axis)
    s = np.sum(shifted, axis=axis)
    n = logw.shape[axis]
    return np.squeeze(m, axis=axis) + np.log(s / n)


@dataclass
class LinearFit:
    intercept: float
    slope: float
    se_intercept: float
    se_slope: float
    r2: float
    n: int


def ols(x, y, weights=None) -> LinearFit:
    """Least-squares line y ~ a + b x with standard errors.

    With ``weights`` (inverse-variance), performs weighted LS; the reported
    standard errors then use the weighted residual variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    sw = w.sum()
    xbar = (w * x).sum() / sw
    ybar = (w * y).sum() / sw
    sxx = (w * (x - xbar) ** 2).sum()
    sxy = (w * (x - xbar) * (y - ybar)).sum()
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    resid = y - intercept - slope * x
    dof = max(len(x) - 2, 1)
    s2 = (w * resid**2).sum() / dof
    se_slope = np.sqrt(s2 / sxx)
    se_intercept = np.sqrt(s2 * (1.0 / sw + xbar**2 / sxx))
    sst = (w * (y - ybar) ** 2).sum()
    r2 = 1.0 - (w * resid**2).sum() / sst if sst > 0 else 1.0
    return LinearFit(float(intercept), float(slope), float(se_intercept),
                     float(se_slope), float(r2), len(x))


@dataclass
class RateFit:
    """Exponential decay rate fitted on log-survival data."""

    rate: float
    se_rate: float
    intercept: float
    r2: float
    window: tuple[float, float]
    n_points: int

    @property
    def undetermined(self) -> bool:
        return self.n_points < 3


def fit_log_linear(times, values, counts=None, r2_target: float = 0.98) -> RateFit:
    """Fit log(values) ~ a - rate*t, dropping the smallest times until the
    fit reaches ``r2_target`` R^2 or only two points remain.

    ``counts`` are per-point sample sizes used for inverse-variance weights
    of the log-proportion (survival-curve use case); zero values are dropped.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    times, values = times[keep], values[keep]
    w = None
    if counts is not None:
        counts = np.asarray(counts, dtype=float)[keep]
        # var(log p_hat) ~ (1-p)/(n p)
        var = np.maximum((1.0 - values) / (counts * values), 1e-12)
        w = 1.0 / var
    logv = np.log(values)
    start = 0
    while True:
        n = len(times) - start
        if n < 2:
            start = len(times) - 2
            n = 2
        fit = ols(times[start:], logv[start:], None if w is None else w[start:])
        if fit.r2 >= r2_target or n <= 2:
            return RateFit(
                rate=-fit.slope,
                se_rate=fit.se_slope,
                intercept=fit.intercept,
                r2=fit.r2,
                window=(float(times[start]), float(times[-1])),
                n_points=n,
            )
        start += 1


def sign_test_greater(diffs) -> float:
    """Exact one-sided sign test p-value for H1: median(diffs) > 0.

    Ties are dropped. Returns 1.0 when no informative pairs remain.
    """
    diffs = np.asarray(diffs, dtype=float)
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if n == 0:
        return 1.0
    k = int((diffs > 0).sum())
    return float(sps.binom.sf(k - 1, n, 0.5))


def two_proportion_z(k1: int, n1: int, k2: int, n2: int) -> tuple[float, float]:
    """z statistic and two-sided p-value for H0: p1 == p2."""
    p1, p2 = k1 / n1, k2 / n2
    pool = (k1 + k2) / (n1 + n2)
    se = np.sqrt(pool * (1 - pool) * (1 / n1 + 1 / n2))
    if se == 0:
        return 0.0, 1.0
    z = (p2 - p1) / se
    return float(z), float(2 * sps.norm.sf(abs(z)))


def ks_2sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and p-value."""
    res = sps.ks_2samp(a, b, method="auto")
    return float(res.statistic), float(res.pvalue)


def mean_se(x, axis=None) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    n = x.size if axis is None else x.shape[axis]
    m = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / np.sqrt(n)
    return m, se


def pooled_mean_se(means, ses) -> tuple[float, float]:
    """Pool i.i.d. batch estimates: plain mean, se shrunk by sqrt(k)."""
    means = np.asarray(means, dtype=float)
    ses = np.asarray(ses, dtype=float)
    k = len(means)
    return float(means.mean()), float(np.sqrt((ses**2).sum()) / k)
