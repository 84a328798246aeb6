import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from logpolymer.rng import RngStream
from logpolymer.stats import (
    bonferroni_level,
    chi_square,
    correlation_test,
    fit_power_law,
    ks_critical,
    ks_statistic,
    ks_test,
    ks_two_sample,
    mean_se,
)


def uniform_cdf(x):
    return np.clip(x, 0.0, 1.0)


def test_ks_statistic_hand_example():
    # sample {0.1, 0.5, 0.9}: largest gap between the step function and the diagonal
    assert ks_statistic([0.5, 0.1, 0.9], uniform_cdf) == pytest.approx(max(1 / 3 - 0.1, 2 / 3 - 0.5, 0.1, 0.5 - 1 / 3, 0.9 - 2 / 3), abs=1e-15)


def test_ks_single_point():
    assert ks_statistic([0.3], uniform_cdf) == pytest.approx(0.7)


def test_ks_matches_scipy():
    x = RngStream(1, 0).uniform(500)
    d, p = ks_test(x, uniform_cdf)
    ref = sps.kstest(x, "uniform", method="exact")
    assert d == pytest.approx(ref.statistic, abs=1e-14)
    assert p == pytest.approx(ref.pvalue, rel=1e-8)


def test_ks_critical_is_the_quantile():
    c = ks_critical(100, 0.05)
    assert sps.kstwo.sf(c, 100) == pytest.approx(0.05, rel=1e-8)


def test_ks_empty_raises():
    with pytest.raises(ValueError):
        ks_statistic([], uniform_cdf)


def test_ks_two_sample_identical_and_disjoint():
    a = np.arange(10.0)
    assert ks_two_sample(a, a)[0] == 0.0
    assert ks_two_sample(a, a + 100)[0] == 1.0


def test_ks_detects_shift():
    x = RngStream(2, 0).uniform(2000) * 0.9
    assert ks_test(x, uniform_cdf)[1] < 1e-6


def test_chi_square_exact_counts():
    r = chi_square([25, 25, 50], [0.25, 0.25, 0.5])
    assert r.statistic == 0.0 and r.dof == 2 and r.pvalue == pytest.approx(1.0)


def test_chi_square_hand_value():
    r = chi_square([30, 20, 50], [0.25, 0.25, 0.5])
    assert r.statistic == pytest.approx(25 / 25 + 25 / 25 + 0.0)
    assert r.pvalue == pytest.approx(math.exp(-1.0))  # chi2 with 2 dof: sf(x) = e^{-x/2}


def test_chi_square_pools_small_cells():
    p = np.array([0.001, 0.002, 0.497, 0.5])
    r = chi_square([0, 1, 49, 50], p)
    assert r.bins == 2
    r = chi_square([0, 0, 0, 10], [0.01, 0.01, 0.01, 0.97])
    assert r.bins == 1 and r.pvalue == 1.0


def test_chi_square_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        chi_square([1, 2], [0.5, 0.6])
    with pytest.raises(ValueError):
        chi_square([1, 2, 3], [0.5, 0.5])


def test_correlation_test():
    rng = RngStream(3, 0)
    x = rng.normal(3000)
    assert correlation_test(x, rng.normal(3000))[1] > 1e-3
    assert correlation_test(x, x + 0.5 * rng.normal(3000))[1] < 1e-10
    with pytest.raises(ValueError):
        correlation_test([1, 2], [1, 2])


@given(st.floats(-3, 3), st.floats(0.1, 10))
def test_power_law_exact_fit(b, c):
    x = np.array([8.0, 16, 32, 64, 128])
    fit = fit_power_law(x, c * x**b)
    assert fit.slope == pytest.approx(b, abs=1e-10)
    assert fit.intercept == pytest.approx(math.log(c), abs=1e-9)
    assert fit.slope_se < 1e-8


def test_power_law_interval_covers_truth():
    rng = RngStream(4, 0)
    x = np.array([64.0, 128, 256, 512, 1024])
    covered = 0
    for _ in range(400):
        y = x ** (2 / 3) * np.exp(0.05 * rng.normal(5))
        f = fit_power_law(x, y)
        covered += f.ci_low <= 2 / 3 <= f.ci_high
    assert 0.9 <= covered / 400 <= 0.99


def test_power_law_errors():
    with pytest.raises(ValueError):
        fit_power_law([1, 2], [1, 2])
    with pytest.raises(ValueError):
        fit_power_law([1, 2, 3], [1, 0, 3])
    with pytest.raises(ValueError):
        fit_power_law([2, 2, 2], [1, 2, 3])


def test_bonferroni_family_false_alarm_rate():
    # 28 KS tests on exact uniforms per family; the family-wise error must stay near 0.01
    level = bonferroni_level(0.01, 28)
    rng = RngStream(5, 0)
    alarms = 0
    fams = 300
    for _ in range(fams):
        p = [ks_test(rng.uniform(400), uniform_cdf)[1] for _ in range(28)]
        alarms += min(p) < level
    # P(Bin(300, 0.01) >= 9) < 1e-3
    assert alarms <= 8
    with pytest.raises(ValueError):
        bonferroni_level(0.01, 0)


def test_mean_se():
    m, se = mean_se([1.0, 2.0, 3.0, 4.0])
    assert m == 2.5 and se == pytest.approx(math.sqrt(5 / 3) / 2)
    assert math.isnan(mean_se([1.0])[1])
