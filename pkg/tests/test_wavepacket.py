import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bohmflux.errors import InvalidParameterError
from bohmflux.wavepacket import (GaussianPacket, GridField, Superposition, density,
                                 grid_geometry, make_gaussian, momentum_amplitude, norm,
                                 sample_to_grid)

from conftest import rel_err

vec = st.lists(st.floats(-3, 3), min_size=3, max_size=3)


def test_peak_value_at_origin():
    p = make_gaussian([0, 0, 0], [0, 0, 0], 1.0)
    assert abs(p([0.0, 0.0, 0.0]) - (2 * np.pi) ** -0.75) < 1e-15


@given(vec, vec, st.floats(0.3, 3.0))
@settings(max_examples=30, deadline=None)
def test_analytic_norm_is_one(c, k, s):
    assert abs(norm(make_gaussian(c, k, s)) - 1.0) < 1e-12


@given(vec)
@settings(max_examples=20, deadline=None)
def test_density_independent_of_boost(x):
    a = make_gaussian([0.2, 0, -0.1], [0, 0, 0], 1.0)
    b = make_gaussian([0.2, 0, -0.1], [0, 0, 4], 1.0)
    assert abs(density(a, x) - density(b, x)) < 1e-14


def test_momentum_amplitude_closed_form():
    k0 = np.array([0.0, 0.0, 4.0])
    p = make_gaussian([0, 0, 0], k0, 1.0)
    k = np.random.default_rng(3).normal(size=(50, 3)) + k0
    ref = (2 / np.pi) ** 0.75 * np.exp(-np.sum((k - k0) ** 2, axis=1))
    assert rel_err(momentum_amplitude(p, k), ref) < 1e-14


def test_shift_theorem():
    a = np.array([1.0, -2.0, 0.5])
    k0 = np.array([0.0, 1.0, 0.0])
    p0 = make_gaussian([0, 0, 0], k0, 0.8)
    # psi(x - a): same envelope moved to a, carrier phase shifted by -k0.a
    pa = GaussianPacket(a, k0, 0.8, np.exp(-1j * k0 @ a))
    x = np.random.default_rng(2).normal(size=(10, 3))
    np.testing.assert_allclose(pa(x), p0(x - a), atol=1e-14)
    k = np.random.default_rng(1).normal(size=(20, 3))
    np.testing.assert_allclose(pa.momentum_amplitude(k),
                               np.exp(-1j * k @ a) * p0.momentum_amplitude(k), atol=1e-14)


def test_parseval_by_spherical_quadrature():
    # independent oracle: radial Gauss-Hermite-like quadrature of |psi_hat|^2
    p = make_gaussian([0, 0, 0], [0, 0, 0], 1.3)
    r = np.linspace(0, 8, 4001)
    dens = np.abs(p.momentum_amplitude(np.stack([r, 0 * r, 0 * r], -1))) ** 2
    total = 4 * np.pi * np.trapezoid(dens * r**2, r)
    assert abs(total - 1) < 1e-8


def test_grid_norm_and_spectral_transform(small_grid_packet):
    p, g = small_grid_packet
    assert abs(g.norm() - 1) < 1e-6
    k = np.random.default_rng(0).normal(scale=1.0, size=(30, 3))
    assert rel_err(g.momentum_amplitude(k), p.momentum_amplitude(k)) < 1e-6


def test_gradient_matches_finite_difference():
    p = make_gaussian([0.3, 0, 0], [1, -2, 3], 0.9)
    x = np.array([[0.4, 0.1, -0.7]])
    _, g = p.evaluate(x, 0.7)
    h = 1e-6
    fd = [(p(x + h * e, 0.7) - p(x - h * e, 0.7)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(g[0], np.array(fd)[:, 0], rtol=1e-7)


def test_superposition_normalized():
    s = Superposition((make_gaussian([0, 0, 0], [0, 0, 1], 1.0),
                       GaussianPacket([0, 0, 1.0], [0, 0, -1], 1.0, 0.5))).normalized()
    o, d = grid_geometry((-9, -9, -9), (10, 10, 10), 0.25)
    assert abs(s.norm() - 1) < 1e-12
    assert abs(sample_to_grid(s, o, 0.25, d).norm() - 1) < 1e-6


def test_bytes_roundtrip(small_grid_packet):
    _, g = small_grid_packet
    h = GridField.from_bytes(g.to_bytes())
    assert np.array_equal(h.values, g.values) and h.spacing == g.spacing


def test_invalid_sigma():
    with pytest.raises(InvalidParameterError):
        make_gaussian([0, 0, 0], [0, 0, 0], -1.0)
