import numpy as np
import pytest

from bohmflux.config import ConfigError, bundled_scenario, load_config, parse_config

GOOD = """
[packet]
center = 0 0 0   ; length
k0 = 0 0 4       ; 1/length
sigma = 1        ; length
[potential]
kind = none
[spheres]
radii = 40 80    ; length
[bins]
theta_edges = 0 20 180   ; degrees
n_sectors = 2
[ensemble]
n_traj = 100     ; count
seed = 5
[output]
label = t
"""


def test_good_config_builds_scenario():
    cfg = parse_config(GOOD)
    sc = cfg.scenario()
    assert sc.radii == (40.0, 80.0) and sc.n_traj == 100 and sc.seed == 5
    assert len(sc.bins) == 4
    assert abs(cfg.packet().norm() - 1) < 1e-12
    assert cfg.hash() == parse_config(GOOD + "\n# trailing comment\n").hash()


def test_empty_config_lists_missing_sections():
    with pytest.raises(ConfigError) as exc:
        parse_config("")
    assert set(exc.value.missing_sections) == {"packet", "potential", "spheres", "bins",
                                               "ensemble", "output"}


@pytest.mark.parametrize("edit,needle", [
    (("[output]", "[output]\ncolour = red"), "unknown key"),
    (("[output]", "[extra]\na = 1\n[output]"), "unknown section"),
    (("seed = 5", ""), "missing key [ensemble] seed"),
    (("sigma = 1 ", "sigma = -1 "), "sigma must be positive"),
    (("radii = 40 80", "radii = 80 40"), "increasing"),
    (("theta_edges = 0 20 180", "theta_edges = 0 20 170"), "theta_edges"),
    (("kind = none", "kind = coulomb"), "not one of"),
    (("kind = none", "kind = square_well\nv0 = -1"), "a required"),
    (("n_traj = 100", "n_traj = 1.5"), "as int"),
])
def test_invalid_configs(edit, needle):
    with pytest.raises(ConfigError) as exc:
        parse_config(GOOD.replace(*edit))
    assert any(needle in p for p in exc.value.problems), exc.value.problems


def test_interacting_needs_far_preparation():
    text = GOOD.replace("kind = none", "kind = gaussian_bump\nv0 = 0.2\nw = 1") + """
[grid]
lo = -10 -10 -10
hi = 10 10 10
spacing = 0.5
dt = 0.05
stride = 2
t_max = 1
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert any("far-prepared" in p for p in exc.value.problems)


def test_superposition_keys():
    text = GOOD.replace("sigma = 1        ; length",
                        "sigma = 1\ncenter_2 = 0 0 8\nk0_2 = 0 0 -3\nsigma_2 = 1\namplitude_2 = 0.5")
    p = parse_config(text).packet()
    assert len(p.packets) == 2 and abs(p.norm() - 1) < 1e-12


@pytest.mark.parametrize("name", ["free_forward.cfg", "interacting_bump.cfg", "square_well.cfg"])
def test_bundled_scenarios_parse(name):
    cfg = load_config(bundled_scenario(name))
    assert cfg.seed >= 0
    if cfg.has("grid") or cfg.get("potential", "kind") == "none":
        assert cfg.scenario().n_traj > 0
