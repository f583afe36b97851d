import math

import numpy as np
import pytest

from entropic_lab.model import (
    PINNED,
    ConfigError,
    Free,
    HeightField,
    InteractionU,
    InterfaceModel,
    LatticeBox,
    PotentialV,
    all_neighbor_pairs_symmetric,
    box_symmetries,
    conditional_weight,
    energy,
    local_energy_delta,
)

from conftest import make_model


def random_field(box, rng, p_pin=0.2, scale=2.0):
    h = rng.exponential(scale, box.n_sites) + 1e-6
    pin = rng.random(box.n_sites) < p_pin
    h[pin] = 0.0
    return HeightField(box, h, pin)


@pytest.mark.parametrize("d,N", [(1, 1), (1, 5), (2, 1), (2, 3), (3, 2)])
def test_box_size_and_neighbours(d, N):
    box = LatticeBox(d, N)
    assert box.n_sites == (2 * N + 1) ** d
    nbr = box.neighbors
    assert nbr.shape == (box.n_sites, 2 * d)
    interior = ~box.is_boundary
    assert np.all(nbr[interior] >= 0)
    assert all_neighbor_pairs_symmetric(box)
    for i in range(box.n_sites):
        assert box.index(box.coord(i)) == i


def test_box_rejects_bad_input():
    with pytest.raises(ConfigError):
        LatticeBox(0, 2)
    with pytest.raises(ConfigError):
        LatticeBox(2, -1)


def test_interaction_invariants():
    xs = np.linspace(-8, 8, 2001)
    for u in (InteractionU("quadratic"), InteractionU("perturbed", 0.0), InteractionU("perturbed", 0.7)):
        np.testing.assert_allclose(u(xs), u(-xs), rtol=0, atol=1e-14)
        lo, hi = u.curvature_bounds
        d2 = u.second_derivative(xs)
        assert np.all(d2 >= lo - 1e-12) and np.all(d2 <= hi + 1e-12)
        # finite-difference check of U''
        h = 1e-3
        fd = (u(xs + h) - 2 * u(xs) + u(xs - h)) / h**2
        np.testing.assert_allclose(fd, d2, atol=1e-5)
    assert np.all(InteractionU("quadratic").second_derivative(xs) == 1.0)
    with pytest.raises(ConfigError):
        InteractionU("perturbed", 1.5)
    with pytest.raises(ConfigError):
        InteractionU("quartic")


@pytest.mark.parametrize("v", [PotentialV("linear"), PotentialV("power", 1.0), PotentialV("power", 2.5)])
def test_potential_invariants(v):
    assert float(v(0.0)) == 0.0
    xs = np.linspace(0, 20, 4001)
    vals = v(xs)
    assert np.all(np.diff(vals) >= 0)
    assert np.all(vals[:-2] - 2 * vals[1:-1] + vals[2:] >= -1e-9)
    for alpha in (0.5, 2.0, 3.0):
        r = v.growth_ratio(alpha)
        assert np.isfinite(r) and r <= alpha ** v.param * (1 + 1e-9)


def test_potential_rejects_p_below_one():
    with pytest.raises(ConfigError):
        PotentialV("power", 0.5)


def test_model_invariants():
    box = LatticeBox(2, 2)
    with pytest.raises(ConfigError):
        InterfaceModel(box, lam=-1.0)
    with pytest.raises(ConfigError):
        InterfaceModel(box, upsilon=-0.1)
    assert InterfaceModel(box, lam=0.0).pure_wetting
    assert not InterfaceModel(box, lam=0.1).pure_wetting


def test_model_config_round_trip():
    m = make_model(3, 2, lam=0.25, ups=0.5, u=InteractionU("perturbed", 0.3), v=PotentialV("power", 2.0))
    m2 = InterfaceModel.from_dict(m.to_dict())
    assert m2 == m and m2.config_hash() == m.config_hash()
    with pytest.raises(ConfigError):
        InterfaceModel.from_dict({"N": 3})


def test_height_field_tags():
    box = LatticeBox(1, 1)
    f = HeightField.from_values(box, [PINNED, Free(0.5), 0.0])
    assert f[0] is PINNED and f[1] == Free(0.5) and f[2] is PINNED
    with pytest.raises(ValueError):
        Free(0.0)
    with pytest.raises(ValueError):
        HeightField(box, np.array([-0.1, 1.0, 1.0]), np.zeros(3, bool))
    with pytest.raises(ValueError):
        HeightField(box, np.array([0.5, 1.0, 1.0]), np.array([True, False, False]))
    with pytest.raises(ValueError):
        HeightField(box, np.array([0.0, 1.0, 1.0]), np.zeros(3, bool))


# energy examples


def test_energy_zero_field():
    for lam in (0.0, 1.0, 7.5):
        m = make_model(2, 1, lam=lam)
        assert energy(m, HeightField.flat(m.box)) == 0.0


def test_energy_centre_bump():
    m = make_model(2, 1, lam=1.0)
    f = HeightField.flat(m.box)
    f[m.box.index((0, 0))] = Free(1.0)
    assert energy(m, f) == pytest.approx(3.0, abs=1e-15)


def test_energy_d1_against_direct_sum():
    m = make_model(1, 1, lam=2.0, v=PotentialV("power", 2.0))
    f = HeightField.from_values(m.box, [Free(0.5), Free(1.0), Free(0.5)])
    # direct term-by-term sum with zero exterior
    h = [0.0, 0.5, 1.0, 0.5, 0.0]
    ref = sum(0.5 * (h[k + 1] - h[k]) ** 2 for k in range(4)) + 2.0 * sum(x * x for x in h[1:4])
    assert ref == 3.5
    assert energy(m, f) == pytest.approx(ref, rel=1e-15)


def test_energy_rejects_negative_heights():
    m = make_model(1, 1)
    f = HeightField.flat(m.box)
    f.heights[1] = -1.0
    with pytest.raises(ValueError):
        energy(m, f)


def test_energy_additive_over_edges(rng):
    m = make_model(2, 2, lam=0.3)
    f = random_field(m.box, rng)
    h = f.heights
    edge_sum = sum(float(m.u(h[i] - (h[j] if j >= 0 else 0.0))) for i, j in m.box.edges())
    assert energy(m, f) == pytest.approx(edge_sum + 0.3 * float(np.sum(m.v(h))), rel=1e-12)


# local_energy_delta


def test_local_delta_examples():
    m = make_model(2, 1, lam=1.0)
    f = HeightField.flat(m.box)
    c = m.box.index((0, 0))
    assert local_energy_delta(m, f, c, Free(1.0)) == pytest.approx(3.0)
    assert local_energy_delta(m, f, c, PINNED) == 0.0
    f[c] = Free(0.7)
    assert local_energy_delta(m, f, c, Free(0.7)) == 0.0
    with pytest.raises(ValueError):
        local_energy_delta(m, f, c, -0.5)


def test_local_delta_matches_recomputation(rng):
    m = make_model(2, 3, lam=0.4, ups=0.5, u=InteractionU("perturbed", 0.5))
    for _ in range(100):
        f = random_field(m.box, rng)
        site = int(rng.integers(m.box.n_sites))
        new = PINNED if rng.random() < 0.3 else Free(float(rng.exponential(2.0)) + 1e-9)
        before = energy(m, f)
        d = local_energy_delta(m, f, site, new)
        f[site] = new
        assert d == pytest.approx(energy(m, f) - before, rel=1e-10, abs=1e-10)


def test_sequential_deltas_compose(rng):
    m = make_model(2, 3, lam=0.2, v=PotentialV("power", 1.5))
    f = random_field(m.box, rng)
    start = energy(m, f)
    acc = start
    for _ in range(500):
        site = int(rng.integers(m.box.n_sites))
        new = Free(float(rng.exponential(1.5)) + 1e-9)
        acc += local_energy_delta(m, f, site, new)
        f[site] = new
    assert acc == pytest.approx(energy(m, f), rel=1e-10)


# conditional weights


def test_conditional_weight_examples():
    m = make_model(2, 0)
    f = HeightField.flat(m.box)
    w, lw = conditional_weight(m, f, 0, 0.0)
    assert w == 1.0 and lw == 0.0
    w, _ = conditional_weight(m, f, 0, 1.0)
    assert w == pytest.approx(math.exp(-2.0), rel=1e-14)
    with pytest.raises(ValueError):
        conditional_weight(m, f, 0, -1.0)


def test_conditional_weight_d1_formula():
    m = make_model(1, 1, lam=1.0)
    f = HeightField.from_values(m.box, [Free(0.5), PINNED, Free(1.0)])
    w, lw = conditional_weight(m, f, 1, 0.75)
    ref = -(0.5 * 0.25**2 + 0.5 * 0.25**2) - 0.75
    assert lw == pytest.approx(ref, rel=1e-14)
    assert w == pytest.approx(math.exp(ref), rel=1e-14)


def test_conditional_weight_log_concave(rng):
    m = make_model(2, 2, lam=0.7, u=InteractionU("perturbed", 0.8), v=PotentialV("power", 2.0))
    f = random_field(m.box, rng)
    xs = np.linspace(0, 6, 601)
    lw = np.array([conditional_weight(m, f, 7, x)[1] for x in xs])
    assert np.all(lw[:-2] - 2 * lw[1:-1] + lw[2:] <= 1e-10)
    assert np.all(np.exp(lw) > 0)


# invariants


def _transform(box, perm, signs):
    coords = box.coords
    new = coords[:, perm] * np.array(signs)
    return np.array([box.index(c) for c in new])


def test_energy_invariant_under_box_symmetries(rng):
    m = make_model(2, 3, lam=0.5, ups=0.2)
    f = random_field(m.box, rng)
    e0 = energy(m, f)
    for perm, signs in box_symmetries(m.box):
        g = _transform(m.box, perm, signs)
        h = np.empty_like(f.heights)
        p = np.empty_like(f.pinned)
        h[g] = f.heights
        p[g] = f.pinned
        assert energy(m, HeightField(m.box, h, p)) == pytest.approx(e0, rel=1e-12)


def test_energy_midpoint_convexity(rng):
    m = make_model(2, 3, lam=0.3, u=InteractionU("perturbed", 0.6), v=PotentialV("power", 2.0))
    for _ in range(100):
        a = random_field(m.box, rng)
        b = random_field(m.box, rng)
        mid = HeightField.from_heights(m.box, 0.5 * (a.heights + b.heights))
        assert energy(m, mid) <= 0.5 * (energy(m, a) + energy(m, b)) + 1e-10
