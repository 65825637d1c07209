import numpy as np
import pytest

from bohmflux.errors import GeometryError, InvalidParameterError
from bohmflux.evolution import split_step_evolve
from bohmflux.guidance import current
from bohmflux.surfaces import (AsymptoticSource, SphereSpec, asymptotic_current, assign_bins,
                               cone, cone_probability, escape_horizon, flux_across_surface,
                               flux_table, momentum_cone_probability, momentum_probabilities,
                               polar_partition)
from bohmflux.wavepacket import StandingWave, grid_geometry, make_gaussian, sample_to_grid


def _cone_momentum_oracle(k0z, half_angle):
    """|psi_hat|^2 of the sigma = 1 Gaussian integrated over a cone about +z,
    by nested scipy quadrature in (k, cos theta); azimuth is trivial."""
    from scipy.integrate import dblquad

    def f(mu, k):
        q2 = k * k - 2 * k * k0z * mu + k0z * k0z
        return 2 * np.pi * k * k * (2 / np.pi) ** 1.5 * np.exp(-2 * q2)

    val, _ = dblquad(f, 0, k0z + 8, np.cos(half_angle), 1.0, epsabs=1e-13, epsrel=1e-12)
    return val


def test_partition_covers_sphere():
    bins = polar_partition(np.radians([0, 4, 8, 14, 180]), 8)
    assert len(bins) == 32
    assert abs(sum(b.solid_angle for b in bins) - 4 * np.pi) < 1e-12
    d = np.random.default_rng(0).normal(size=(2000, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    idx = assign_bins(bins, d)
    assert np.all(idx >= 0)
    with pytest.raises(InvalidParameterError):
        polar_partition([0.1, np.pi])


def test_momentum_cone_matches_independent_quadrature(boosted):
    c = cone(np.radians(20))
    assert abs(momentum_cone_probability(boosted, c) - _cone_momentum_oracle(4.0, np.radians(20))) < 1e-9
    total = momentum_probabilities(boosted, polar_partition(np.radians([0, 10, 90, 180]), 3)).sum()
    assert abs(total - 1) < 1e-10


def test_full_sphere_escape_probability(boosted):
    R = 160.0
    res = flux_across_surface(boosted, SphereSpec(R, 32, 32), t_span=(0, 4 * R / 4.0))
    assert abs(res.signed - 1) < 0.02
    assert res.inward < 1e-12


def test_real_field_has_no_flux():
    res = flux_across_surface(StandingWave([1, 1, 1]), SphereSpec(3.0, 8, 8), t_span=(0, 1))
    assert abs(res.signed) < 1e-14 and res.absolute < 1e-14


def test_asymptotic_current_radial_and_accurate(boosted):
    x = np.random.default_rng(1).normal(size=(20, 3)) * 3 + [0, 0, 400]
    ja = asymptotic_current(boosted, x, 100.0)
    cross = np.cross(ja, x)
    assert np.max(np.abs(cross)) <= 1e-12 * np.max(np.abs(ja)) * 400
    xs = np.array([[0.0, 0.0, 400.0]])
    je = current(boosted, xs, 100.0)
    ja = asymptotic_current(boosted, xs, 100.0)
    assert np.linalg.norm(ja - je) / np.linalg.norm(je) <= 1e-2
    with pytest.raises(InvalidParameterError):
        asymptotic_current(boosted, xs, 0.0)


def test_substitution_identity(boosted):
    c = cone(np.radians(20))
    R = 50.0
    tab = flux_table(AsymptoticSource(boosted), SphereSpec(R, 64, 32), [c], [1e-3, 4 * R / 0.5],
                     rel_tol=1e-12, abs_tol=1e-14)
    assert abs(tab.signed_total[0] - momentum_cone_probability(boosted, c)) < 1e-6


def test_cone_probability_limits():
    sym = make_gaussian([0, 0, 0], [0, 0, 0], 1.0)
    full = polar_partition([0, np.pi])[0]
    assert abs(cone_probability(sym, full) - 1) < 1e-10
    up, down = cone(np.radians(30)), cone(np.radians(30), axis=[0, 0, -1])
    assert abs(cone_probability(sym, up, 2.0) - cone_probability(sym, down, 2.0)) < 1e-12
    b = make_gaussian([0, 0, 0], [0, 0, 4], 1.0)
    c = cone(np.radians(20))
    ref = momentum_cone_probability(b, c)
    assert abs(cone_probability(b, c, 40.0) - ref) / ref < 0.01


def test_sphere_outside_grid_rejected():
    p = make_gaussian([0, 0, 0], [0, 0, 0], 1.0)
    o, d = grid_geometry((-6, -6, -6), (6, 6, 6), 0.5)
    fr = split_step_evolve(sample_to_grid(p, o, 0.5, d), None, 0.1, 2)
    with pytest.raises(GeometryError):
        flux_table(fr, SphereSpec(6.0, 8, 8), [cone(np.pi)], [0, 0.2])


def test_escape_horizon_scales_with_radius(boosted):
    assert abs(escape_horizon(boosted, 80) / escape_horizon(boosted, 40) - 2) < 1e-12
