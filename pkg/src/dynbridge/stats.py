"""Estimators and hypothesis tests used by the verification suites."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import SingularDesign, TooFewSamples

MIN_SAMPLES = 30


@dataclass(frozen=True)
class TestVerdict:
    """Outcome of one test; ``passed`` iff ``p_value > threshold``."""

    __test__ = False  # not a pytest class

    name: str
    statistic: float
    p_value: float
    threshold: float
    n: int
    extra: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.p_value > self.threshold

    def to_dict(self):
        return {"name": self.name, "statistic": self.statistic, "p_value": self.p_value,
                "threshold": self.threshold, "n": self.n, "pass": self.passed,
                **{k: v for k, v in self.extra.items()}}


def _need(n, what="samples"):
    if n < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} {what}, got {n}")


def bonferroni(p_values, threshold=0.01):
    """Family-wise adjusted minimum p-value and the pass flag."""
    p = np.asarray(p_values, dtype=float)
    adj = float(min(1.0, p.min() * p.size))
    return adj, adj > threshold


def realized_qv(path, grid=None):
    """Cumulative sum of squared increments along the last axis (starts at 0)."""
    x = np.asarray(path, dtype=float)
    d2 = np.diff(x, axis=-1) ** 2
    zero = np.zeros(x.shape[:-1] + (1,))
    return np.concatenate([zero, np.cumsum(d2, axis=-1)], axis=-1)


def ols_hc(y, X, hc="HC3"):
    """OLS with an intercept and heteroskedasticity-robust covariance.

    Returns (coefficients, standard errors); the intercept comes first.
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    D = np.column_stack([np.ones(y.size), X])
    n, k = D.shape
    if n <= k:
        raise SingularDesign("more regressors than observations")
    Q, R = np.linalg.qr(D)
    diag = np.abs(np.diag(R))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise SingularDesign("design matrix is rank deficient")
    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - D @ beta
    Rinv = np.linalg.inv(R)
    bread = Rinv @ Rinv.T
    lev = np.sum(Q * Q, axis=1)
    if hc == "HC0":
        w = resid**2
    elif hc == "HC1":
        w = resid**2 * n / (n - k)
    else:
        w = resid**2 / np.maximum(1.0 - lev, 1e-12) ** 2
    meat = (D * w[:, None]).T @ D
    cov = bread @ meat @ bread
    return beta, np.sqrt(np.diag(cov))


def martingale_regression(increments, regressors, threshold=0.01, n_tests=1,
                          slopes=None, name="martingale_regression"):
    """Regress increments on past values; pass iff every slope CI contains 0.

    CIs are two-sided at level 1 - threshold / (n_slopes * n_tests)
    (Bonferroni over slopes and over ``n_tests`` checkpoints). ``slopes``
    restricts the verdict to a subset of regressor indices.
    """
    y = np.asarray(increments, dtype=float).ravel()
    _need(y.size)
    beta, se = ols_hc(y, regressors)
    slope_idx = np.arange(1, beta.size) if slopes is None else np.asarray(slopes) + 1
    z = beta[slope_idx] / se[slope_idx]
    p = 2.0 * sps.norm.sf(np.abs(z))
    m = slope_idx.size * n_tests
    adj = float(min(1.0, p.min() * m))
    q = sps.norm.isf(threshold / (2 * m))
    ci = [(float(b - q * s), float(b + q * s)) for b, s in zip(beta[slope_idx], se[slope_idx])]
    return TestVerdict(name, float(np.max(np.abs(z))), adj, threshold, y.size,
                       {"coef": beta.tolist(), "se": se.tolist(), "ci": ci})


def slope_test(y, x, threshold=0.01, name="slope"):
    """Regression of y on x: reports the slope and its robust CI; p-value for slope = 0."""
    y = np.asarray(y, dtype=float).ravel()
    _need(y.size)
    beta, se = ols_hc(y, np.asarray(x, dtype=float).ravel())
    zstat = beta[1] / se[1]
    q = sps.norm.isf(threshold / 2)
    return TestVerdict(name, float(zstat), float(2 * sps.norm.sf(abs(zstat))), threshold,
                       y.size, {"slope": float(beta[1]), "se": float(se[1]),
                                "ci": (float(beta[1] - q * se[1]), float(beta[1] + q * se[1]))})


def normality_test(samples, threshold=0.01, name="normality"):
    """D'Agostino-Pearson omnibus test."""
    x = np.asarray(samples, dtype=float).ravel()
    _need(x.size)
    stat, p = sps.normaltest(x)
    return TestVerdict(name, float(stat), float(p), threshold, x.size)


def ks_two_sample(a, b, threshold=0.01, name="ks_two_sample"):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    _need(min(a.size, b.size))
    res = sps.ks_2samp(a, b, method="asymp")
    return TestVerdict(name, float(res.statistic), float(res.pvalue), threshold,
                       min(a.size, b.size))


def ks_one_sample(a, cdf, threshold=0.01, name="ks_one_sample"):
    a = np.asarray(a, dtype=float).ravel()
    _need(a.size)
    res = sps.kstest(a, cdf, method="asymp")
    return TestVerdict(name, float(res.statistic), float(res.pvalue), threshold, a.size)


def welch_mean_compare(a, b, threshold=0.01, alternative="two-sided", name="welch"):
    """Welch t-test; ``alternative='greater'`` tests mean(a) > mean(b).

    ``passed`` follows the TestVerdict convention (no rejection); a
    difference is established when ``passed`` is False.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    _need(min(a.size, b.size))
    res = sps.ttest_ind(a, b, equal_var=False, alternative=alternative)
    p = float(res.pvalue) if np.isfinite(res.pvalue) else 1.0
    return TestVerdict(name, float(res.statistic) if np.isfinite(res.statistic) else 0.0,
                       p, threshold, min(a.size, b.size),
                       {"mean_a": float(a.mean()), "mean_b": float(b.mean()),
                        "diff": float(a.mean() - b.mean())})


def mean_within(samples, target, n_se=3.0, name="mean"):
    """|mean - target| <= n_se standard errors, reported as a verdict."""
    x = np.asarray(samples, dtype=float).ravel()
    _need(x.size)
    se = x.std(ddof=1) / math.sqrt(x.size)
    z = (x.mean() - target) / se if se > 0 else (0.0 if x.mean() == target else np.inf)
    p = float(2 * sps.norm.sf(abs(z)))
    return TestVerdict(name, float(z), p, float(2 * sps.norm.sf(n_se)), x.size,
                       {"mean": float(x.mean()), "se": float(se), "target": float(target)})


__all__ = ["TestVerdict", "realized_qv", "ols_hc", "martingale_regression", "slope_test",
           "normality_test", "ks_two_sample", "ks_one_sample", "welch_mean_compare",
           "mean_within", "bonferroni"]
