import json

import numpy as np
import pytest
from scipy.optimize import brentq

from kdvdbar.errors import NoDecay, OrderTooHigh
from kdvdbar.scattering import (Potential, ScatteringData, compute_scattering_data,
                                derivative_samples, find_bound_states, named_potential,
                                reflection_coefficient, symmetric_w_grid)


def test_one_soliton_bound_state(sd_one_soliton):
    assert sd_one_soliton.M == 1
    assert abs(sd_one_soliton.kappas[0] - 1.0) < 1e-9
    assert abs(sd_one_soliton.gammas_sq[0] - 2.0) < 1e-7
    assert np.max(np.abs(sd_one_soliton.r_values)) < 1e-6


def test_poschl_teller_levels_and_reflection():
    A = 2.2
    p = named_potential("sech2", L=20.0, h=0.01, amplitude=A)
    k, _ = find_bound_states(p, tol=1e-13)
    nu = (-1 + np.sqrt(1 + 4 * A)) / 2
    np.testing.assert_allclose(k, np.sort(nu - np.arange(0, nu)), atol=1e-8)
    w = np.array([0.3, 0.7, 1.5])
    r, T = reflection_coefficient(p, w, return_transmission=True)
    c2 = np.cos(np.pi * np.sqrt(A + 0.25)) ** 2
    np.testing.assert_allclose(np.abs(r) ** 2, c2 / (np.sinh(np.pi * w) ** 2 + c2), rtol=1e-6)
    np.testing.assert_allclose(np.abs(r) ** 2 + np.abs(T) ** 2, 1.0, atol=1e-10)


def test_two_soliton_potential_levels():
    p = named_potential("sech2", L=20.0, h=0.01, amplitude=6.0)
    k, g = find_bound_states(p, tol=1e-13)
    np.testing.assert_allclose(k, [1.0, 2.0], atol=1e-9)
    np.testing.assert_allclose(g, [6.0, 12.0], rtol=1e-7)


def test_square_well_transcendental_oracle():
    p = named_potential("square_well", L=20.0, h=0.005, V0=1.0, a=1.0)
    k, _ = find_bound_states(p, tol=1e-13)
    exact = brentq(lambda q: np.sqrt(1 - q * q) * np.tan(np.sqrt(1 - q * q)) - q, 1e-6, 1 - 1e-9)
    assert k.size == 1
    assert abs(k[0] - exact) < 1e-5


def test_default_datum_has_one_state_and_generic_r(sd_default):
    assert sd_default.M == 1
    assert 0.48 < sd_default.kappas[0] < 0.49
    # generic potential: |r| -> 1 at w -> 0, r(-w) = conj r(w)
    r = sd_default.r_values
    assert abs(abs(r[r.size // 2]) - 1) < 1e-2
    np.testing.assert_allclose(r[::-1], np.conj(r), atol=1e-12)


def test_no_decay_raises():
    x = np.linspace(-10, 10, 201)
    with pytest.raises(NoDecay):
        find_bound_states(Potential(x, -np.ones_like(x)))


def test_potential_validation():
    with pytest.raises(ValueError):
        Potential(np.array([0.0, 1.0, 3.0] + list(range(4, 10))), np.zeros(9))


def test_derivative_samples_accuracy_and_order_guard():
    h = 0.01
    x = np.arange(-3, 3 + h / 2, h)
    y = np.exp(-x * x) * np.sin(2 * x)
    d1 = derivative_samples(y, h, 1, order=6)
    exact = np.exp(-x * x) * (2 * np.cos(2 * x) - 2 * x * np.sin(2 * x))
    assert np.max(np.abs(d1 - exact)) < 1e-9
    with pytest.raises(OrderTooHigh):
        derivative_samples(y, h, 3, smoothness_N=1)


def test_symmetric_grid_excludes_zero():
    w = symmetric_w_grid(1.0, 0.1)
    assert np.all(w != 0)
    np.testing.assert_allclose(w, -w[::-1])


def test_round_trip_serialization(tmp_path, sd_default):
    path = tmp_path / "sd.json"
    sd_default.save(path)
    back = ScatteringData.load(path)
    np.testing.assert_array_equal(back.kappas, sd_default.kappas)
    np.testing.assert_array_equal(back.r_values, sd_default.r_values)
    assert json.loads(path.read_text())["smoothness_N"] == sd_default.smoothness_N


def test_gaussian_convergence_in_h():
    vals = []
    for h in (0.02, 0.01):
        p = named_potential("gaussian", L=20.0, h=h, V0=0.5, sigma=2.0)
        vals.append(compute_scattering_data(p, 1.0, 0.1, tol=1e-13))
    assert abs(vals[0].kappas[0] - vals[1].kappas[0]) < 1e-10
    assert np.max(np.abs(vals[0].r_values - vals[1].r_values)) < 1e-8
