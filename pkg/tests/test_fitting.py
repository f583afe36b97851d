import numpy as np
import pytest

from entropic_lab.fitting import FitError, fit_exponent

LAMS = np.logspace(-8, -2, 7)


def test_recovers_log_power():
    r = fit_exponent(LAMS, 3.0 * np.abs(np.log(LAMS)), None, ("log_abslog", "log"))
    assert r.exponent == pytest.approx(1.0, abs=1e-3)
    assert r.amplitude == pytest.approx(3.0, rel=1e-9)


def test_recovers_square_root_of_log():
    r = fit_exponent(LAMS, 0.7 * np.abs(np.log(LAMS)) ** 0.5, None, ("log_abslog", "log"))
    assert r.exponent == pytest.approx(0.5, abs=1e-3)


def test_recovers_power_law():
    r = fit_exponent(LAMS, 2.5 * LAMS ** (-1 / 3), None, ("log", "log"))
    assert r.exponent == pytest.approx(-1 / 3, abs=1e-3)
    assert r.amplitude == pytest.approx(2.5, rel=1e-9)
    assert r.r_squared == pytest.approx(1.0)


def test_linear_in_sqrt_log():
    ups = np.logspace(-4, -1, 6)
    r = fit_exponent(ups, 1.0 + 2.0 * np.sqrt(np.abs(np.log(ups))), None, ("sqrt_abslog", "identity"))
    assert r.exponent == pytest.approx(2.0, abs=1e-9)
    assert r.amplitude == pytest.approx(1.0, abs=1e-9)


def test_permutation_invariance(rng):
    y = 2.0 * LAMS ** -0.3 * np.exp(0.05 * rng.standard_normal(LAMS.size))
    e = 0.05 * y
    a = fit_exponent(LAMS, y, e)
    perm = rng.permutation(LAMS.size)
    b = fit_exponent(LAMS[perm], y[perm], e[perm])
    assert a.exponent == b.exponent and (a.ci_low, a.ci_high) == (b.ci_low, b.ci_high)


def test_seeded_bootstrap_is_reproducible(rng):
    y = LAMS**-0.3 * np.exp(0.05 * rng.standard_normal(LAMS.size))
    assert fit_exponent(LAMS, y).to_dict() == fit_exponent(LAMS, y).to_dict()
    assert fit_exponent(LAMS, y, seed=1).ci_low != fit_exponent(LAMS, y, seed=2).ci_low


def test_bad_inputs():
    with pytest.raises(FitError):
        fit_exponent([1e-3] * 5, [1.0, 2, 3, 4, 5])
    with pytest.raises(FitError):
        fit_exponent(LAMS[:3], LAMS[:3])
    with pytest.raises(FitError):
        fit_exponent(LAMS, -LAMS)
    with pytest.raises(FitError):
        fit_exponent(LAMS, LAMS, axes=("log", "cube"))
    with pytest.raises(FitError):
        fit_exponent(LAMS, LAMS, errors=-np.ones(LAMS.size))


def test_interval_coverage():
    """The 68% interval from noisy synthetic data covers the truth at the nominal rate."""
    rng = np.random.default_rng(7)
    truth, trials, hits = -0.3, 200, 0
    for t in range(trials):
        clean = 2.0 * LAMS**truth
        err = 0.03 * clean
        y = clean + err * rng.standard_normal(LAMS.size)
        r = fit_exponent(LAMS, y, err, n_bootstrap=400, seed=t)
        hits += r.ci_low <= truth <= r.ci_high
    rate = hits / trials
    # binomial 3-sigma band around 0.68
    assert abs(rate - 0.68) < 3 * np.sqrt(0.68 * 0.32 / trials)


def test_recovery_within_three_half_widths():
    rng = np.random.default_rng(11)
    truth, trials, hits = -1 / 3, 200, 0
    for t in range(trials):
        clean = 1.5 * LAMS**truth
        err = 0.01 * clean
        y = clean + err * rng.standard_normal(LAMS.size)
        r = fit_exponent(LAMS, y, err, n_bootstrap=300, seed=t)
        hits += abs(r.exponent - truth) <= 3 * r.ci_halfwidth
    assert hits / trials >= 0.95
