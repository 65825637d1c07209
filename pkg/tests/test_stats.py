import numpy as np
import pytest
from scipy import stats as sps

from bohmflux.errors import GeometryError, InvalidParameterError
from bohmflux.evolution import GaussianBump
from bohmflux.sampling import sample_initial_positions, sample_positions
from bohmflux.stats import (GridSpec, ScatteringScenario, binomial_z, cross_section_check,
                            crossing_expectation_check, default_partition,
                            freedman_diaconis_edges, run_ensemble)
from bohmflux.surfaces import SphereSpec, cone, flux_table, momentum_probabilities, polar_partition
from bohmflux.wavepacket import GaussianPacket, Superposition, make_gaussian


def test_sample_moments():
    x = sample_initial_positions(make_gaussian([0, 0, 0], [0, 0, 4], 1.0), 100_000, 11)
    assert np.all(np.abs(x.mean(axis=0)) < 4 / np.sqrt(1e5))
    assert np.all(np.abs(x.var(axis=0) - 1) < 0.05)


def test_sampling_is_deterministic():
    p = make_gaussian([1, 0, 0], [0, 0, 1], 0.7)
    assert np.array_equal(sample_positions(p, 500, 3), sample_positions(p, 500, 3))
    assert not np.array_equal(sample_positions(p, 500, 3), sample_positions(p, 500, 4))


def test_superposition_sampling_matches_marginal():
    # two well separated packets with weights 0.8 / 0.2 in probability
    a = GaussianPacket([0, 0, -6], [0, 0, 0], 1.0, np.sqrt(0.8))
    b = GaussianPacket([0, 0, 6], [0, 0, 0], 1.0, np.sqrt(0.2))
    x = sample_positions(Superposition((a, b)).normalized(), 20_000, 5)
    frac = np.mean(x[:, 2] > 0)
    assert abs(frac - 0.2) < 4 * np.sqrt(0.16 / 20_000)
    cdf = lambda z: 0.8 * sps.norm.cdf(z, -6, 1) + 0.2 * sps.norm.cdf(z, 6, 1)
    assert sps.kstest(x[:, 2], cdf).pvalue > 0.01


def test_binomial_z():
    z, se = binomial_z(0.55, 0.5, 100)
    assert abs(se - 0.05) < 1e-15 and abs(z - 1.0) < 1e-12
    z, _ = binomial_z(0.0, 0.0, 100)
    assert z == 0.0


def test_freedman_diaconis_width():
    s = np.random.default_rng(0).normal(size=1000)
    e = freedman_diaconis_edges(s)
    iqr = np.subtract(*np.percentile(s, [75, 25]))
    assert abs(np.diff(e).mean() - 2 * iqr / 10) < 0.1 * (2 * iqr / 10)
    e2 = freedman_diaconis_edges(s, -10, 10)
    assert e2[0] == -10 and e2[-1] == 10


def test_default_partition_has_32_bins():
    assert len(default_partition()) == 32


def test_scenario_preconditions():
    p = make_gaussian([0, 0, 0], [0, 0, 4], 1.0)
    grid = GridSpec((-5, -5, -5), (5, 5, 5), 0.5, 0.1, 1, 1.0)
    with pytest.raises(InvalidParameterError):
        ScatteringScenario(p, GaussianBump(0.2, 1.0), radii=(10,), grid=grid)
    with pytest.raises(InvalidParameterError):
        ScatteringScenario(make_gaussian([0, 0, -20], [0, 0, 4], 1.0), GaussianBump(0.2, 1.0),
                           radii=(10,))
    with pytest.raises(InvalidParameterError):
        ScatteringScenario(p, radii=(), n_traj=10)
    far = make_gaussian([0, 0, -14], [0, 0, 4], 1.0)
    with pytest.raises(GeometryError, match="enclose"):
        ScatteringScenario(far, GaussianBump(0.2, 1.0), radii=(15,), grid=grid)


@pytest.fixture(scope="module")
def small_free_run():
    p = make_gaussian([0, 0, 0], [0, 0, 4], 1.0)
    bins = polar_partition(np.radians([0, 10, 20, 180]), 2)
    sc = ScatteringScenario(p, radii=(40.0,), bins=bins, n_traj=3000, seed=9)
    res = run_ensemble(sc)[40.0]
    tab = flux_table(p, SphereSpec(40.0, 48, 16), bins, list(res.t_span), rel_tol=1e-8,
                     abs_tol=1e-10)
    return sc, res, tab


def test_small_free_run_agrees_with_flux_and_momentum(small_free_run):
    sc, res, tab = small_free_run
    assert res.sigma_hat.sum() == 1.0 and res.aborts == 0
    chk = cross_section_check(res, tab, momentum_probabilities(sc.packet, sc.bins))
    assert chk["pass"]
    cr = crossing_expectation_check(res, tab)
    assert cr["pass"] and cr["minus_fraction"] == 0.0


def test_mismatched_geometry_rejected(small_free_run):
    sc, res, _ = small_free_run
    other = flux_table(sc.packet, SphereSpec(41.0, 8, 8), sc.bins, list(res.t_span),
                       rel_tol=1e-6)
    with pytest.raises(GeometryError):
        cross_section_check(res, other)


def test_symmetric_packet_antipodal_bins():
    p = make_gaussian([0, 0, 0], [0, 0, 0], 1.0)
    bins = [cone(np.radians(45)), cone(np.radians(45), axis=[0, 0, -1])]
    sc = ScatteringScenario(p, radii=(8.0,), bins=bins, n_traj=4000, seed=2, t_max=400.0)
    res = run_ensemble(sc)[8.0]
    a, b = res.exits
    se = np.sqrt(a + b)  # difference of two Poisson-like counts
    assert abs(a - b) <= 3 * se
