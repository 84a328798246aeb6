"""Goodness-of-fit, independence and power-law fitting helpers."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .rng import RngStream


def ks_statistic(samples, cdf) -> float:
    """sup |F_n - F| for a vectorized cdf."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.size
    if n == 0:
        raise ValueError("KS statistic needs at least one sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_pvalue(stat: float, n: int) -> float:
    """Exact-distribution p-value of the one-sample statistic (scipy's kstwo)."""
    return float(sps.kstwo.sf(stat, n))


def ks_critical(n: int, alpha: float) -> float:
    return float(sps.kstwo.isf(alpha, n))


def ks_test(samples, cdf) -> tuple[float, float]:
    d = ks_statistic(samples, cdf)
    return d, ks_pvalue(d, np.asarray(samples).size)


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample statistic sup |F_a - F_b| with the asymptotic Kolmogorov p-value."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("two-sample KS needs nonempty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    en = math.sqrt(a.size * b.size / (a.size + b.size))
    return d, float(sps.kstwobign.sf(d * en))


@dataclass
class ChiSquareResult:
    statistic: float
    dof: int
    pvalue: float
    bins: int


def chi_square(observed, expected_probs, min_expected: float = 5.0) -> ChiSquareResult:
    """Pearson chi-square against cell probabilities; cells with small expectation are pooled."""
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(expected_probs, dtype=float)
    if obs.shape != p.shape:
        raise ValueError("observed counts and probabilities differ in shape")
    if np.any(p < 0) or not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise ValueError("expected probabilities must be a distribution")
    n = obs.sum()
    exp = n * p
    order = np.argsort(exp, kind="stable")
    o_cells, e_cells = [], []
    acc_o = acc_e = 0.0
    for k in order:
        acc_o += obs[k]
        acc_e += exp[k]
        if acc_e >= min_expected:
            o_cells.append(acc_o)
            e_cells.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 or acc_o > 0:
        if e_cells:
            o_cells[-1] += acc_o
            e_cells[-1] += acc_e
        else:
            o_cells.append(acc_o)
            e_cells.append(acc_e)
    o_cells = np.array(o_cells)
    e_cells = np.array(e_cells)
    if e_cells.size < 2:
        return ChiSquareResult(0.0, 0, 1.0, int(e_cells.size))
    stat = float(np.sum((o_cells - e_cells) ** 2 / e_cells))
    dof = e_cells.size - 1
    return ChiSquareResult(stat, dof, float(sps.chi2.sf(stat, dof)), int(e_cells.size))


def correlation_test(x, y) -> tuple[float, float]:
    """Pearson correlation and its two-sided p-value under independence (t distribution)."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = x.size
    if n != y.size or n < 4:
        raise ValueError("correlation test needs paired samples of size >= 4")
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(np.dot(xc, yc) / math.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, float(2.0 * sps.t.sf(abs(t), n - 2))


def permutation_independence(x, y, rng: RngStream, n_perm: int = 999, statistic=None) -> tuple[float, float]:
    """Permutation test of independence between paired rows x[k], y[k].

    The default statistic is the largest absolute rank correlation between the
    columns of x and the columns of y, so feature vectors such as (max, sum)
    can be compared. Returns (observed statistic, p-value).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] != y.shape[0]:
        raise ValueError("paired samples differ in length")
    if statistic is None:
        rx = _standard_ranks(x)
        ry = _standard_ranks(y)

        def statistic(a, b):
            return float(np.max(np.abs(a.T @ b)) / a.shape[0])

        x, y = rx, ry
    obs = statistic(x, y)
    hits = 0
    for _ in range(n_perm):
        perm = rng.permutation(x.shape[0])
        if statistic(x[perm], y) >= obs:
            hits += 1
    return obs, (hits + 1) / (n_perm + 1)


def _standard_ranks(a: np.ndarray) -> np.ndarray:
    r = np.argsort(np.argsort(a, axis=0, kind="stable"), axis=0).astype(float)
    r -= r.mean(axis=0)
    sd = r.std(axis=0)
    sd[sd == 0] = 1.0
    return r / sd


def bonferroni_level(alpha: float, m: int) -> float:
    if m < 1:
        raise ValueError("need at least one test")
    return alpha / m


def mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class PowerLawFit:
    slope: float
    intercept: float
    r2: float
    slope_se: float
    ci_low: float
    ci_high: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("slope", "intercept", "r2", "slope_se", "ci_low", "ci_high")}


def fit_power_law(x, y, level: float = 0.95) -> PowerLawFit:
    """Least squares of log y on log x; the slope interval uses the t quantile with n - 2 dof."""
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size < 3:
        raise ValueError("power-law fit needs at least three paired points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    mx, my = lx.mean(), ly.mean()
    sxx = float(np.sum((lx - mx) ** 2))
    if sxx == 0:
        raise ValueError("x values must not all coincide")
    slope = float(np.sum((lx - mx) * (ly - my)) / sxx)
    intercept = float(my - slope * mx)
    resid = ly - (intercept + slope * lx)
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((ly - my) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    n = x.size
    se = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else float("nan")
    q = float(sps.t.ppf(0.5 + level / 2.0, n - 2))
    return PowerLawFit(slope, intercept, r2, se, slope - q * se, slope + q * se)
