import numpy as np
import pytest

from bohmflux.wavepacket import grid_geometry, make_gaussian, sample_to_grid


@pytest.fixture
def boosted():
    """sigma = 1 packet at the origin moving along +z with |k0| = 4."""
    return make_gaussian([0, 0, 0], [0, 0, 4], 1.0)


@pytest.fixture
def small_grid_packet():
    p = make_gaussian([0.5, -0.3, 0.2], [0.0, 0.0, 0.0], 1.0)
    origin, dims = grid_geometry((-10, -10, -10), (10, 10, 10), 0.25)
    return p, sample_to_grid(p, origin, 0.25, dims)


def rel_err(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))) / np.max(np.abs(b)))


# ---------------------------------------------------------------------------
# acceptance summary: one line per criterion, printed after the run

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _CRITERIA.setdefault(number, [title, []])[1].append(rep.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        status = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
