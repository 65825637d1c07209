import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bohmflux.errors import NodeProximityError
from bohmflux.evolution import split_step_evolve
from bohmflux.guidance import (FrameSource, Status, count_crossings, current, integrate_ensemble,
                               integrate_trajectory, velocity)
from bohmflux.guidance import CrossingEvent
from bohmflux.wavepacket import (OutgoingSphericalWave, PlaneWave, StandingWave, grid_geometry,
                                 make_gaussian, sample_to_grid)

from conftest import rel_err


def _law(x0, t, sigma=1.0, c=0.0, k0=0.0):
    """Closed-form free Gaussian path: centre drift plus radial spreading."""
    c, k0, x0 = map(lambda a: np.asarray(a, dtype=float), (c, k0, x0))
    return c + k0 * t + (x0 - c) * np.sqrt(1 + t**2 / (4 * sigma**4))


def test_plane_wave_current_and_velocity():
    pw = PlaneWave([0, 0, 2])
    x = np.random.default_rng(0).normal(size=(8, 3))
    np.testing.assert_allclose(current(pw, x), np.tile([0, 0, 2.0], (8, 1)), atol=1e-14)
    np.testing.assert_allclose(velocity(pw, x, 3.0), np.tile([0, 0, 2.0], (8, 1)), atol=1e-14)


def test_real_fields_carry_no_current():
    g = make_gaussian([0, 0, 0], [0, 0, 0], 1.0)
    x = np.random.default_rng(1).normal(size=(8, 3))
    assert np.max(np.abs(velocity(g, x, 0.0))) < 1e-15
    assert np.max(np.abs(current(StandingWave([1, 1, 1]), x + 0.3))) < 1e-15


def test_spherical_wave_current_is_radial():
    f, k = 0.7 - 0.2j, 3.0
    x = np.random.default_rng(2).normal(size=(10, 3)) * 5
    r = np.linalg.norm(x, axis=1)
    j = current(OutgoingSphericalWave(f, k), x)
    ref = (k * abs(f) ** 2 / r**2)[:, None] * x / r[:, None]
    np.testing.assert_allclose(j, ref, rtol=1e-12)


@given(st.floats(0.0, 10.0), st.lists(st.floats(-4, 4), min_size=3, max_size=3))
@settings(max_examples=40, deadline=None)
def test_free_gaussian_velocity_field(t, x):
    g = make_gaussian([0, 0, 0], [0, 0, 0], 1.0)
    v = velocity(g, np.array([x]), t)[0]
    np.testing.assert_allclose(v, np.array(x) * t / (4 + t**2), atol=1e-12)


def test_node_guard():
    with pytest.raises(NodeProximityError):
        velocity(StandingWave([1, 1, 1]), np.array([[0.0, 0.5, 0.5]]))


def test_trajectory_law_single():
    g = make_gaussian([0, 0, 0], [0, 0, 0], 1.0)
    traj, _ = integrate_trajectory([1.0, 0.0, 0.0], g, (0, 20))
    exact = _law([1, 0, 0], traj.times[:, None])
    assert rel_err(traj.positions, exact) < 1e-6


def test_plane_wave_exit():
    traj, events = integrate_trajectory([0, 0, 0], PlaneWave([0, 0, 2]), (0, 8), R_exit=10)
    assert traj.status is Status.EXITED
    assert abs(traj.exit_time - 5) < 1e-9
    np.testing.assert_allclose(traj.exit_position, [0, 0, 10], atol=1e-8)
    assert count_crossings(events) == (1, 1, 0, 1)


def test_stationary_state_does_not_move():
    traj, _ = integrate_trajectory([0.4, 0.7, 1.1], StandingWave([1, 1, 1]), (0, 10))
    assert np.max(np.abs(traj.positions - [0.4, 0.7, 1.1])) < 1e-12


def test_count_crossings_sequences():
    def ev(s):
        return CrossingEvent(0.0, np.zeros(3), s, 1.0)

    assert count_crossings([]) == (0, 0, 0, 0)
    assert count_crossings([ev(1), ev(-1), ev(1)]) == (3, 2, 1, 1)


def test_boosted_ensemble_law_and_crossings(boosted):
    x0 = np.random.default_rng(5).normal(size=(200, 3))
    res = integrate_ensemble(x0, boosted, (0, 20), radii=(30.0,))
    law = _law(x0, 20.0, k0=[0, 0, 4])
    assert rel_err(res.final_positions, law) < 1e-6
    # exit times solve |x(t)| = R on the closed-form paths
    ok = np.isfinite(res.exit_times[:, 0])
    te = res.exit_times[ok, 0]
    r = np.linalg.norm(_law(x0[ok], te[:, None], k0=[0, 0, 4]), axis=1)
    assert np.max(np.abs(r - 30.0)) < 1e-6


def test_frame_source_matches_analytic_on_nodes():
    p = make_gaussian([0, 0, -2], [0, 0, 2], 1.0)
    o, d = grid_geometry((-10, -10, -10), (10, 10, 12), 0.25)
    fr = split_step_evolve(sample_to_grid(p, o, 0.25, d), None, 0.25, 8)
    fr.carrier = np.array([0, 0, 2.0])
    src = FrameSource(fr)
    x = o + 0.25 * np.random.default_rng(0).integers(30, 50, size=(300, 3))
    ps, gs = src.evaluate(x, np.full(300, 1.0))
    pa, ga = p.evaluate(x, 1.0)
    assert rel_err(ps, pa) < 1e-7 and rel_err(gs, ga) < 1e-6
    # between frames the cubic Hermite error is small
    ps, gs = src.evaluate(x, np.full(300, 1.13))
    pa, ga = p.evaluate(x, 1.13)
    assert rel_err(ps, pa) < 2e-3 and rel_err(gs, ga) < 2e-3
