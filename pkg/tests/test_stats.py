import itertools

import numpy as np
import pytest

from entropic_lab.stats import (
    Estimate,
    EstimatorSeries,
    covariance,
    integrated_autocorr_time,
    joint_separation,
    merge_estimates,
)


def ar1(n, rho, rng):
    x = np.empty(n)
    x[0] = rng.standard_normal()
    e = rng.standard_normal(n) * np.sqrt(1 - rho**2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    return x


def test_tau_lower_bound(rng):
    assert integrated_autocorr_time(rng.standard_normal(1000)) >= 0.5
    assert integrated_autocorr_time(np.ones(50)) == 0.5
    assert integrated_autocorr_time([1.0]) == 0.5


def test_tau_ar1(rng):
    rho = 0.8
    tau = integrated_autocorr_time(ar1(200_000, rho, rng))
    assert tau == pytest.approx(0.5 * (1 + rho) / (1 - rho), rel=0.1)


def test_stderr_scales_as_inverse_sqrt_n(rng):
    ns = np.array([1000, 4000, 16000, 64000])
    se = [np.mean([EstimatorSeries("x", rng.standard_normal(n)).stderr for _ in range(20)]) for n in ns]
    slope = np.polyfit(np.log(ns), np.log(se), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.05)


def test_series_summary(rng):
    s = EstimatorSeries("m", rng.standard_normal(500) + 3.0)
    d = s.summary()
    assert d["n_samples"] == 500 and d["observable"] == "m"
    assert d["mean"] == pytest.approx(3.0, abs=0.2)


def test_merge_is_order_independent(rng):
    parts = [Estimate("h", float(rng.normal()), float(rng.uniform(0.01, 0.1)), 1.0, int(rng.integers(100, 1000)))
             for _ in range(5)]
    ref = merge_estimates(parts)
    for perm in itertools.permutations(parts):
        assert merge_estimates(perm) == ref


def test_covariance_of_correlated_pair(rng):
    z = rng.standard_normal(20000)
    a = EstimatorSeries("a", z + rng.standard_normal(20000))
    b = EstimatorSeries("b", z + rng.standard_normal(20000))
    c = covariance(a, b)
    assert abs(c.mean - 1.0) < 3 * c.stderr + 1e-3


def test_joint_separation():
    a = Estimate("a", 1.0, 0.3, 1, 10)
    b = Estimate("b", 0.0, 0.4, 1, 10)
    assert joint_separation(a, b) == pytest.approx(2.0)
