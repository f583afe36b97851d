import math

import numpy as np
import pytest

from entropic_lab.ising import (
    DominationError,
    IsingParams,
    SpinConfig,
    boundary_form_energy,
    flip_probability_plus,
    heat_bath_spin,
    ising_energy,
    run_ising_chain,
    sequential_monotone_coupling,
    site_index,
    sweep_ising,
)
from entropic_lab.model import ConfigError
from entropic_lab.oracles import enumerate_states


def test_params_validation():
    for bad in ({"N": 5}, {"N": 2}, {"beta": -1.0}, {"lam": -0.1}, {"bc": "free"}):
        with pytest.raises(ConfigError):
            IsingParams(**bad)
    p = IsingParams(beta=0.7, lam=0.1, h=0.5, N=8)
    assert IsingParams.from_dict(p.to_dict()) == p
    with pytest.raises(ConfigError):
        IsingParams.from_dict({"beta": 0.6})


def test_site_index_convention():
    assert site_index(8, 1, 0) == (4, 0)
    assert site_index(8, -3, 7) == (0, 7)
    with pytest.raises(IndexError):
        site_index(8, 5, 0)


def test_energy_examples():
    p = IsingParams(N=4, bc="plus")
    assert ising_energy(p, SpinConfig.ground(p)) == 0.0
    q = IsingParams(N=4, bc="pm", h=1.0)
    assert ising_energy(q, SpinConfig.ground(q)) == 8.0  # four broken bonds of weight 2
    q2 = q.with_params(h=0.5)
    assert ising_energy(q2, SpinConfig.ground(q2)) == 4.0


def test_flat_interface_has_lowest_energy():
    p = IsingParams(N=8)
    ground = ising_energy(p, SpinConfig.ground(p))
    for k in range(1, 7):
        c = SpinConfig.ground(p)
        c.spins[1:-1, 1 : k + 1] = -1  # raise the interface by k rows
        assert ising_energy(p, c) >= ground
    _, logw, obs = enumerate_states(p.with_params(N=6), with_layers=False)
    assert obs["energy"].min() == ising_energy(p.with_params(N=6), SpinConfig.ground(p.with_params(N=6)))


def test_energy_linear_in_field(rng):
    p = IsingParams(N=8)
    c = SpinConfig.random(p, rng)
    e0, e1, e2 = (ising_energy(p.with_params(lam=lam), c) for lam in (0.0, 0.3, 0.6))
    assert e2 - e1 == pytest.approx(e1 - e0)
    assert e1 - e0 == pytest.approx(-0.3 * c.spins.sum())


def test_boundary_form_differs_by_constant(rng):
    p = IsingParams(N=6, lam=0.2, h=0.7)
    diffs = []
    for _ in range(50):
        c = SpinConfig.random(p, rng)
        diffs.append(ising_energy(p, c) - boundary_form_energy(p, c.spins[1:-1, 1:-1]))
    assert np.ptp(diffs) < 1e-12


def test_spin_config_validation():
    p = IsingParams(N=4)
    s = SpinConfig.ground(p).spins.copy()
    s[0, 0] = 1
    with pytest.raises(ValueError):
        SpinConfig(4, "pm", s)
    with pytest.raises(ValueError):
        SpinConfig(4, "pm", np.zeros((4, 4)))


def test_heat_bath_extremes(rng):
    p0 = IsingParams(N=6, beta=0.0)
    c = SpinConfig.ground(p0)
    ups = 0
    for _ in range(4000):
        heat_bath_spin(p0, c, (0, 2), rng)
        ups += c[(0, 2)] > 0
    assert abs(ups / 4000 - 0.5) < 3 * math.sqrt(0.25 / 4000)
    cold = IsingParams(N=6, beta=50.0, bc="plus")
    c = SpinConfig.ground(cold)
    c.spins[2, 2] = -1
    heat_bath_spin(cold, c, (0, 2), rng)
    assert c[(0, 2)] == 1
    assert flip_probability_plus(cold, c, (0, 2)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        heat_bath_spin(cold, c, (0, 0), rng)


def test_sweep_energy_change_is_exact(rng):
    p = IsingParams(N=10, lam=0.1, h=0.6)
    c = SpinConfig.random(p, rng)
    e = ising_energy(p, c)
    for _ in range(20):
        e += sweep_ising(p, c, rng)
    assert e == pytest.approx(ising_energy(p, c), abs=1e-9)


@pytest.mark.parametrize("N", [4, 6])
def test_chain_matches_enumeration(N):
    p = IsingParams(beta=0.6, lam=0.1, h=0.8, N=N)
    _, logw, obs = enumerate_states(p)
    w = np.exp(logw - logw.max())
    res = run_ising_chain(p, 200_000, 2_000, thinning=2, seed=5)
    for name in ("magnetization", "lambda_minus", "c_minus", "contour_length"):
        exact = float(np.dot(w, obs[name]) / w.sum())
        s = res[name]
        assert abs(s.mean - exact) < 4 * s.stderr + 1e-9


def test_strong_field_pins_interface():
    p = IsingParams(beta=0.6, lam=1.0, N=16)
    res = run_ising_chain(p, 2000, 200, seed=1)
    assert res["lambda_minus"].mean / 16 < 3
    assert np.all(res["ratio"].values <= 1) and np.all(res["ratio"].values > 0)
    assert np.all(res["c_minus"].values <= res["lambda_minus"].values)


def test_chain_reproducible_and_validated():
    p = IsingParams(N=8)
    a = run_ising_chain(p, 300, 50, seed=3)
    b = run_ising_chain(p, 300, 50, seed=3)
    assert np.array_equal(a["lambda_minus"].values, b["lambda_minus"].values)
    with pytest.raises(ValueError):
        run_ising_chain(p, 10, 10)
    with pytest.raises(ConfigError):
        run_ising_chain(p.with_params(bc="plus"), 100, 10, ("lambda_minus",))
    with pytest.raises(ConfigError):
        run_ising_chain(p, 100, 10, ("susceptibility",))


# monotone coupling


def test_coupling_identical_measures():
    p = IsingParams(beta=0.6, lam=0.1, N=6)
    r = sequential_monotone_coupling(p, p, seed=3)
    assert np.array_equal(r.upper.spins, r.lower.spins)
    assert np.allclose(r.p_upper, r.p_lower)
    assert r.violations == 0 and not r.approximate


def test_coupling_infinite_temperature():
    p = IsingParams(beta=0.0, N=6)
    r = sequential_monotone_coupling(p, p, seed=1)
    assert np.allclose(r.p_upper, 0.5)


def test_coupling_plus_dominates_pm():
    up = IsingParams(beta=0.6, lam=0.1, N=4, bc="plus")
    lo = IsingParams(beta=0.6, lam=0.1, N=4, bc="pm")
    rng = np.random.default_rng(0)
    for seed in rng.integers(0, 2**63, 10_000):
        r = sequential_monotone_coupling(up, lo, seed=int(seed))
        assert r.dominates and r.violations == 0


def test_coupling_marginals_are_exact():
    up = IsingParams(beta=0.6, lam=0.2, N=4, bc="plus")
    lo = IsingParams(beta=0.6, lam=0.2, N=4, bc="pm")
    n = 4000
    hits_u = hits_l = 0
    for seed in range(n):
        r = sequential_monotone_coupling(up, lo, seed=seed)
        hits_u += r.upper.spins[1, 1] > 0
        hits_l += r.lower.spins[1, 1] > 0
    for params, hits in ((up, hits_u), (lo, hits_l)):
        states, logw, _ = enumerate_states(params, with_layers=False)
        w = np.exp(logw - logw.max())
        p = float(w[states[:, 0] > 0].sum() / w.sum())
        assert abs(hits / n - p) < 4 * math.sqrt(p * (1 - p) / n)


def test_coupling_with_conditioning_event():
    p = IsingParams(beta=0.6, lam=0.0, N=6)
    r = sequential_monotone_coupling(p, p, seed=2, min_c_minus=8)
    assert r.dominates


def test_coupling_violation_raises():
    # the pm measure does not dominate the all-plus one
    up = IsingParams(beta=0.6, N=4, bc="pm")
    lo = IsingParams(beta=0.6, N=4, bc="plus")
    with pytest.raises(DominationError):
        sequential_monotone_coupling(up, lo, seed=0)
    r = sequential_monotone_coupling(up, lo, seed=0, strict=False)
    assert r.violations > 0


def test_coupling_input_checks():
    with pytest.raises(ValueError):
        sequential_monotone_coupling(IsingParams(N=4), IsingParams(N=6))
    with pytest.raises(ValueError):
        sequential_monotone_coupling(IsingParams(N=4), IsingParams(N=4), order=[0, 0, 1, 2])
