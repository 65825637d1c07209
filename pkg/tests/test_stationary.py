import numpy as np
import pytest
from scipy.special import spherical_jn

from bohmflux.evolution import GaussianBump, NoPotential, SquareWell
from bohmflux.stationary import (PhaseShiftTable, born_amplitude, differential_cross_section,
                                 lippmann_schwinger_asymptotics_check, optical_theorem_residual,
                                 phase_shift_scan, phase_shifts, phase_shifts_at, radial_solve,
                                 square_well_s_wave, total_cross_section)


def _fold(d):
    return (d + np.pi / 2) % np.pi - np.pi / 2


def test_free_log_derivative_matches_bessel():
    k, r_max = 1.7, 9.0
    sol = radial_solve(NoPotential(), k, np.arange(6), r_max=r_max, h=0.002)
    x = k * r_max
    ls = np.arange(6)
    u = x * spherical_jn(ls, x)
    du = k * (spherical_jn(ls, x) + x * spherical_jn(ls, x, derivative=True))
    np.testing.assert_allclose(sol.log_derivative, du / u, rtol=1e-8)


def test_free_s_wave_is_sine():
    sol = radial_solve(NoPotential(), 2.0, [0], r_max=6.0)
    ratio = sol.u[0, 5:] / np.sin(2.0 * sol.r[5:])
    mask = np.abs(np.sin(2.0 * sol.r[5:])) > 0.1
    assert np.ptp(ratio[mask]) < 1e-7 * np.max(np.abs(ratio))


def test_square_well_interior_and_exterior_shape():
    k, v0, a = 1.0, -2.0, 1.0
    kap = np.sqrt(k * k - 2 * v0)
    sol = radial_solve(SquareWell(v0, a), k, [0], r_max=5.0)
    r, u = sol.r, sol.u[0]
    inside = (r > 0.05) & (r < a - 0.02)
    ratio = u[inside] / np.sin(kap * r[inside])
    assert np.ptp(ratio) < 1e-6 * np.abs(ratio).max()
    d = -k * a + np.arctan(k / kap * np.tan(kap * a))
    outside = (r > a + 0.02) & (np.abs(np.sin(k * r + d)) > 0.2)
    ratio = u[outside] / np.sin(k * r[outside] + d)
    assert np.ptp(ratio) < 1e-6 * np.abs(ratio).max()


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_square_well_s_wave_closed_form(k):
    kap = np.sqrt(k * k + 4.0)
    ref = _fold(-k + np.arctan(k / kap * np.tan(kap)))
    tab = phase_shifts(SquareWell(-2.0, 1.0), k)
    assert abs(_fold(tab.deltas[0] - ref)) < 1e-6
    assert abs(_fold(square_well_s_wave(-2.0, 1.0, k) - ref)) < 1e-14


def test_hard_sphere_limit():
    # finite barrier: delta_0 = -ka + arctan(k tanh(kappa a) / kappa), kappa = sqrt(2 V0 - k^2)
    tab = phase_shifts(SquareWell(1e7, 1.0), 1.0, l_max=0)
    assert abs(tab.deltas[0] - (-1.0)) < 1e-3


def test_zero_potential_has_zero_shifts():
    tab = phase_shifts(NoPotential(), 3.0, l_max=10)
    assert np.max(np.abs(tab.deltas)) <= 1e-10
    assert np.max(differential_cross_section(tab, np.linspace(0, np.pi, 7))) < 1e-20


def test_numerov_fourth_order():
    bump = GaussianBump(0.2, 1.0)
    ls = np.arange(4)
    ref = phase_shifts_at(bump, 4.0, ls, 0.001)
    e1 = np.max(np.abs(phase_shifts_at(bump, 4.0, ls, 0.02) - ref))
    e2 = np.max(np.abs(phase_shifts_at(bump, 4.0, ls, 0.01) - ref))
    assert 12 < e1 / e2 < 22


def test_s_wave_only_is_isotropic():
    tab = PhaseShiftTable(2.0, np.array([0.3]), True)
    dcs = differential_cross_section(tab, np.linspace(0, np.pi, 9))
    np.testing.assert_allclose(dcs, np.sin(0.3) ** 2 / 4.0, rtol=1e-14)
    assert abs(total_cross_section(tab) - 4 * np.pi * np.sin(0.3) ** 2 / 4) < 1e-14


@pytest.mark.parametrize("pot,k", [(SquareWell(-2.0, 1.0), 2.0), (GaussianBump(0.2, 1.0), 4.0)])
def test_optical_theorem(pot, k):
    tab = phase_shifts(pot, k)
    assert tab.converged
    assert optical_theorem_residual(tab) <= 1e-8


def test_born_amplitude_of_gaussian_bump():
    # closed-form Fourier transform of v0 exp(-r^2/2w^2)
    v0, w, k = 0.2, 1.0, 3.0
    th = np.linspace(0, np.pi, 7)
    q = 2 * k * np.sin(th / 2)
    ref = -2 * v0 * w**3 * np.sqrt(np.pi / 2) * np.exp(-q * q * w * w / 2)
    np.testing.assert_allclose(born_amplitude(GaussianBump(v0, w), k, th), ref, atol=1e-10)


def test_weak_bump_approaches_born():
    bump = GaussianBump(0.005, 1.0)
    tab = phase_shifts(bump, 2.0)
    th = np.linspace(0.1, np.pi, 5)
    f = tab.amplitude(th)
    fb = born_amplitude(bump, 2.0, th)
    assert np.max(np.abs(f.real - fb)) < 0.02 * np.max(np.abs(fb))


def test_asymptotic_form_checks():
    free = lippmann_schwinger_asymptotics_check(NoPotential(), 2.0)
    assert free.residual <= 1e-8
    well = SquareWell(-2.0, 1.0)
    near = lippmann_schwinger_asymptotics_check(well, 2.0, shell=(10, 20))
    far = lippmann_schwinger_asymptotics_check(well, 2.0, shell=(20, 40))
    assert 1.6 < near.residual / far.residual < 2.5
    assert near.max_f_error < 1e-4


def test_scan_is_continuous_in_k():
    d = phase_shift_scan(SquareWell(-2.0, 1.0), np.linspace(0.2, 4.0, 40), 1)
    assert np.max(np.abs(np.diff(d, axis=0))) < 0.5
