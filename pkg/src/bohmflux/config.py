"""Scenario configuration files: flat sectioned key-value text.

Every value is a number, a list of numbers separated by blanks, or a word.
Inline comments after ';' or '#' carry the units.  Unknown sections and keys
are rejected, and every check runs before any computation starts.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError
from .evolution import make_potential
from .stats import GridSpec, ScatteringScenario
from .surfaces import cone, polar_partition
from .wavepacket import GaussianPacket, Superposition

SECTIONS = ("packet", "potential", "grid", "spheres", "bins", "ensemble", "output")
REQUIRED = ("packet", "potential", "spheres", "bins", "ensemble", "output")

# key -> (kind, required); kinds: float, int, vec3, floats, word, bool
SCHEMA = {
    "packet": {"center": ("vec3", True), "k0": ("vec3", True), "sigma": ("float", True),
               "amplitude": ("float", False)},
    "potential": {"kind": ("word", True), "v0": ("float", False), "a": ("float", False),
                  "w": ("float", False), "k_values": ("floats", False), "l_max": ("int", False)},
    "grid": {"lo": ("vec3", True), "hi": ("vec3", True), "spacing": ("float", True),
             "dt": ("float", True), "stride": ("int", True), "t_max": ("float", True)},
    "spheres": {"radii": ("floats", True), "n_theta": ("int", False), "n_phi": ("int", False)},
    "bins": {"theta_edges": ("floats", True), "n_sectors": ("int", False),
             "cone_half_angle": ("float", False)},
    "ensemble": {"n_traj": ("int", True), "seed": ("int", True), "t_max": ("float", False),
                 "seeds": ("floats", False), "rtol": ("float", False), "atol": ("float", False)},
    "output": {"write_frames": ("bool", False), "n_paths": ("int", False),
               "label": ("word", False)},
}
# extra packets of a superposition: center_2, k0_2, sigma_2, amplitude_2, ...
_EXTRA = re.compile(r"^(center|k0|sigma|amplitude)_(\d+)$")


class ConfigError(InvalidParameterError):
    """Invalid scenario configuration; ``problems`` lists every issue found."""

    def __init__(self, problems, missing_sections=()):
        self.problems = list(problems)
        self.missing_sections = list(missing_sections)
        super().__init__("; ".join(self.problems))


def _parse_value(kind, raw, where, problems):
    text = raw.strip()
    try:
        if kind == "float":
            return float(text)
        if kind == "int":
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind in ("vec3", "floats"):
            vals = [float(t) for t in text.replace(",", " ").split()]
            if kind == "vec3" and len(vals) != 3:
                raise ValueError
            if not vals:
                raise ValueError
            return vals
        if kind == "bool":
            low = text.lower()
            if low in ("yes", "true", "1", "on"):
                return True
            if low in ("no", "false", "0", "off"):
                return False
            raise ValueError
        if not text:
            raise ValueError
        return text
    except ValueError:
        problems.append(f"{where}: cannot read {raw!r} as {kind}")
        return None


@dataclass
class ScenarioConfig:
    values: dict
    text: str = ""
    source: str = ""
    extras: dict = field(default_factory=dict)

    def get(self, section, key, default=None):
        return self.values.get(section, {}).get(key, default)

    def has(self, section) -> bool:
        return section in self.values

    @property
    def seed(self) -> int:
        return int(self.values["ensemble"]["seed"])

    def canonical(self) -> dict:
        return {"values": self.values, "extras": self.extras}

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    # -- builders ---------------------------------------------------------
    def packet(self):
        p = self.values["packet"]
        if not self.extras:
            # a lone packet is normalized; its global amplitude carries no information
            return GaussianPacket(p["center"], p["k0"], p["sigma"])
        base = GaussianPacket(p["center"], p["k0"], p["sigma"], p.get("amplitude", 1.0))
        extra = []
        for idx in sorted(self.extras):
            e = self.extras[idx]
            extra.append(GaussianPacket(e["center"], e["k0"], e["sigma"], e.get("amplitude", 1.0)))
        return Superposition((base, *extra)).normalized()

    def potential(self):
        p = dict(self.values["potential"])
        kind = p.pop("kind")
        p.pop("k_values", None)
        p.pop("l_max", None)
        return make_potential(kind, **p)

    def grid(self):
        if "grid" not in self.values:
            return None
        g = self.values["grid"]
        return GridSpec(tuple(g["lo"]), tuple(g["hi"]), g["spacing"], g["dt"], g["stride"], g["t_max"])

    def bins(self):
        b = self.values["bins"]
        return polar_partition(np.radians(b["theta_edges"]), int(b.get("n_sectors", 1)))

    def forward_cone(self):
        half = self.values["bins"].get("cone_half_angle", 20.0)
        k0 = np.asarray(self.values["packet"]["k0"], dtype=float)
        axis = k0 / np.linalg.norm(k0) if np.linalg.norm(k0) > 0 else np.array([0.0, 0.0, 1.0])
        return cone(np.radians(half), axis, label="forward")

    def scenario(self, seed: int | None = None) -> ScatteringScenario:
        e = self.values["ensemble"]
        return ScatteringScenario(
            packet=self.packet(), potential=self.potential(),
            radii=tuple(self.values["spheres"]["radii"]), bins=self.bins(),
            t_max=e.get("t_max"), n_traj=int(e["n_traj"]),
            seed=self.seed if seed is None else int(seed), grid=self.grid(),
            name=self.values["output"].get("label", ""),
        )


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    """Parse and validate a scenario document; raises ConfigError listing all problems."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None,
                                   default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"syntax: {exc}"]) from exc
    problems = []
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    problems += [f"unknown section [{s}]" for s in unknown]
    missing = [s for s in REQUIRED if s not in cp.sections()]
    problems += [f"missing section [{s}]" for s in missing]
    values, extras = {}, {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            continue
        schema = SCHEMA[sec]
        out = {}
        for key, raw in cp.items(sec):
            where = f"[{sec}] {key}"
            m = _EXTRA.match(key) if sec == "packet" else None
            if m:
                kind = SCHEMA["packet"][m.group(1)][0]
                v = _parse_value(kind, raw, where, problems)
                extras.setdefault(int(m.group(2)), {})[m.group(1)] = v
                continue
            if key not in schema:
                problems.append(f"unknown key {where}")
                continue
            out[key] = _parse_value(schema[key][0], raw, where, problems)
        for key, (_, req) in schema.items():
            if req and key not in out:
                problems.append(f"missing key [{sec}] {key}")
        values[sec] = out
    if not problems:
        problems += _semantic_checks(values, extras)
    if problems:
        raise ConfigError(problems, missing)
    return ScenarioConfig(values, text, source, extras)


def _semantic_checks(values, extras) -> list[str]:
    problems = []
    p = values["packet"]
    if p["sigma"] <= 0:
        problems.append("[packet] sigma must be positive")
    for idx, e in extras.items():
        for key in ("center", "k0", "sigma"):
            if key not in e:
                problems.append(f"[packet] {key}_{idx} missing for extra packet {idx}")
    kind = values["potential"]["kind"]
    need = {"none": (), "square_well": ("v0", "a"), "gaussian_bump": ("v0", "w")}
    if kind not in need:
        problems.append(f"[potential] kind {kind!r} not one of {sorted(need)}")
    else:
        for key in need[kind]:
            if key not in values["potential"]:
                problems.append(f"[potential] {key} required for {kind}")
        allowed = set(need[kind]) | {"kind", "k_values", "l_max"}
        for key in values["potential"]:
            if key not in allowed:
                problems.append(f"[potential] {key} does not apply to {kind}")
    if any(k <= 0 for k in values["potential"].get("k_values", [1.0])):
        problems.append("[potential] k_values must be positive")
    radii = values["spheres"]["radii"]
    if any(r <= 0 for r in radii):
        problems.append("[spheres] radii must be positive")
    if sorted(radii) != list(radii):
        problems.append("[spheres] radii must be increasing")
    edges = values["bins"]["theta_edges"]
    if edges[0] != 0 or edges[-1] != 180 or np.any(np.diff(edges) <= 0):
        problems.append("[bins] theta_edges must increase from 0 to 180 degrees")
    if values["bins"].get("n_sectors", 1) < 1:
        problems.append("[bins] n_sectors must be >= 1")
    e = values["ensemble"]
    if e["n_traj"] < 1:
        problems.append("[ensemble] n_traj must be positive")
    if "grid" in values:
        g = values["grid"]
        if g["spacing"] <= 0 or g["dt"] <= 0 or g["t_max"] <= 0 or g["stride"] < 1:
            problems.append("[grid] spacing, dt, t_max must be positive and stride >= 1")
        if any(h <= l for l, h in zip(g["lo"], g["hi"])):
            problems.append("[grid] hi must exceed lo on every axis")
    if not problems:
        # module-level preconditions (potential parameters, far preparation)
        cfg = ScenarioConfig(values, extras=extras)
        try:
            cfg.potential()
            if kind == "none" or "grid" in values:
                cfg.scenario()
        except (InvalidParameterError, ValueError) as exc:
            problems.append(str(exc))
    return problems


def require_grid(cfg: ScenarioConfig, command: str) -> None:
    """Propagating commands need a [grid] for interacting potentials."""
    if cfg.get("potential", "kind") != "none" and not cfg.has("grid"):
        raise ConfigError([f"[grid] section required by '{command}' for an interacting potential"],
                          ["grid"])


def load_config(path) -> ScenarioConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {p}: {exc.strerror}"]) from exc
    return parse_config(text, str(p))


def bundled_scenario(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    from importlib.resources import files

    return Path(str(files("bohmflux") / "scenarios" / name))
