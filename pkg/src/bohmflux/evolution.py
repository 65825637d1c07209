"""Time evolution under H = -Laplacian/2 + V.

Free packets are evolved in closed form, grid fields spectrally; short-range
potentials use Strang splitting (half kinetic, potential, half kinetic).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BoxOverflowError,
    InsufficientFramesError,
    InvalidParameterError,
    NumericalBreakdownError,
)
from .wavepacket import GridField

log = logging.getLogger(__name__)

#: V(r_cut) must be below this for a potential to count as short range
CUTOFF_LEVEL = 1e-12
BOUNDARY_MASS_TOL = 1e-6


# ---------------------------------------------------------------------------
# potentials


class Potential:
    """Short-range potential; V == 0 beyond ``r_cut``."""

    kind = "abstract"
    r_cut = 0.0
    breakpoints: tuple = ()

    @property
    def is_zero(self) -> bool:
        return False

    def radial(self, r):
        raise TypeError(f"{type(self).__name__} is not a central potential")

    def __call__(self, x):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return self.radial(r)

    def on_grid(self, geom: GridField) -> np.ndarray:
        x, y, z = geom.mesh()
        return self.radial(np.sqrt(x * x + y * y + z * z))

    def spec(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class NoPotential(Potential):
    kind = "none"

    @property
    def is_zero(self) -> bool:
        return True

    def radial(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def on_grid(self, geom):
        return np.zeros(geom.dims)


@dataclass(frozen=True)
class SquareWell(Potential):
    """V(r) = v0 for r < a, zero outside (v0 < 0 is attractive)."""

    v0: float
    a: float
    kind = "square_well"

    def __post_init__(self):
        if not self.a > 0:
            raise InvalidParameterError("square well radius must be positive")

    @property
    def r_cut(self) -> float:
        return float(self.a)

    @property
    def breakpoints(self):
        return (float(self.a),)

    @property
    def is_zero(self) -> bool:
        return self.v0 == 0

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r < self.a, float(self.v0), 0.0)

    def spec(self):
        return {"kind": self.kind, "v0": self.v0, "a": self.a}


@dataclass(frozen=True)
class GaussianBump(Potential):
    """V(r) = v0 exp(-r^2 / (2 w^2)), truncated where it drops below 1e-12."""

    v0: float
    w: float
    kind = "gaussian_bump"

    def __post_init__(self):
        if not self.w > 0:
            raise InvalidParameterError("gaussian bump width must be positive")

    @property
    def r_cut(self) -> float:
        if abs(self.v0) <= CUTOFF_LEVEL:
            return 0.0
        return float(self.w * np.sqrt(2 * np.log(abs(self.v0) / CUTOFF_LEVEL)))

    @property
    def is_zero(self) -> bool:
        return self.v0 == 0

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        v = self.v0 * np.exp(-(r**2) / (2 * self.w**2))
        return np.where(r < self.r_cut, v, 0.0)

    def spec(self):
        return {"kind": self.kind, "v0": self.v0, "w": self.w}


@dataclass(frozen=True, eq=False)
class GridPotential(Potential):
    """Potential sampled on the propagation grid."""

    values: np.ndarray
    r_cut: float
    kind = "grid"

    def __post_init__(self):
        if not np.isfinite(self.r_cut):
            raise InvalidParameterError("grid potential needs a finite cutoff radius")

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def on_grid(self, geom):
        if self.values.shape != geom.dims:
            raise InvalidParameterError("grid potential does not match field grid")
        r = np.sqrt(sum(c * c for c in geom.mesh()))
        return np.where(r < self.r_cut, np.asarray(self.values, dtype=float), 0.0)

    def spec(self):
        return {"kind": self.kind, "r_cut": self.r_cut}


def make_potential(kind: str, **params) -> Potential:
    kind = kind.lower()
    if kind == "none":
        return NoPotential()
    if kind == "square_well":
        return SquareWell(float(params["v0"]), float(params["a"]))
    if kind == "gaussian_bump":
        return GaussianBump(float(params["v0"]), float(params["w"]))
    if kind == "coulomb":
        raise InvalidParameterError(
            "Coulomb potentials are long range and need modified wave operators; not supported"
        )
    raise InvalidParameterError(f"unknown potential kind {kind!r}")


# ---------------------------------------------------------------------------
# free evolution


def free_evolve_analytic(psi, t: float):
    """Closed-form free evolution of a Gaussian packet or superposition."""
    return psi.evolved(t)


def _k_squared(geom: GridField) -> np.ndarray:
    kx, ky, kz = geom.wavenumbers()
    return kx[:, None, None] ** 2 + ky[None, :, None] ** 2 + kz[None, None, :] ** 2


def boundary_mass(geom: GridField, values=None, layer: int | None = None) -> float:
    """Fraction of the norm located within ``layer`` cells of any face."""
    values = geom.values if values is None else values
    if layer is None:
        layer = max(2, min(geom.dims) // 16)
    rho = np.abs(values) ** 2
    total = rho.sum()
    inner = rho[layer:-layer, layer:-layer, layer:-layer].sum()
    return float((total - inner) / total) if total > 0 else 0.0


def _check_boundary(geom, values, tol):
    m = boundary_mass(geom, values)
    if m > tol:
        raise BoxOverflowError(f"boundary mass {m:.3g} exceeds {tol:.1g}")


def free_evolve_spectral(psi: GridField, t: float, *, check_boundary: bool = True,
                         boundary_tol: float = BOUNDARY_MASS_TOL) -> GridField:
    """Multiply momentum amplitudes by exp(-i |k|^2 t / 2)."""
    phase = np.exp(-0.5j * t * _k_squared(psi))
    values = np.fft.ifftn(np.fft.fftn(psi.values) * phase)
    if check_boundary:
        _check_boundary(psi, values, boundary_tol)
    return psi.with_values(values, time=psi.time + t)


def spectral_gradient(geom: GridField, values=None) -> np.ndarray:
    """Gradient of a periodic field, shape (3,) + dims."""
    values = geom.values if values is None else values
    vk = np.fft.fftn(values)
    kx, ky, kz = geom.wavenumbers()
    return np.stack([
        np.fft.ifftn(1j * kx[:, None, None] * vk),
        np.fft.ifftn(1j * ky[None, :, None] * vk),
        np.fft.ifftn(1j * kz[None, None, :] * vk),
    ])


def apply_hamiltonian(geom: GridField, values, v_grid=None) -> np.ndarray:
    out = np.fft.ifftn(0.5 * _k_squared(geom) * np.fft.fftn(values))
    if v_grid is not None:
        out = out + v_grid * values
    return out


def energy(psi: GridField, potential: Potential | None = None) -> float:
    """<H> / <psi|psi> on the grid."""
    kx, ky, kz, ph = psi.momentum_grid()
    k2 = kx[:, None, None] ** 2 + ky[None, :, None] ** 2 + kz[None, None, :] ** 2
    w = np.abs(ph) ** 2
    kinetic = 0.5 * np.sum(k2 * w) / np.sum(w)
    if potential is None or potential.is_zero:
        return float(kinetic)
    rho = psi.density()
    return float(kinetic + np.sum(potential.on_grid(psi) * rho) / np.sum(rho))


# ---------------------------------------------------------------------------
# split-step propagation


@dataclass(eq=False)
class EvolutionFrames:
    """Grid snapshots of one propagation run (shared geometry)."""

    times: np.ndarray
    fields: list
    potential: Potential = field(default_factory=NoPotential)
    dt: float | None = None
    carrier: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.fields):
            raise InvalidParameterError("times and fields differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise InvalidParameterError("frame times must be strictly increasing")
        g0 = self.fields[0]
        for f in self.fields[1:]:
            if f.dims != g0.dims or f.spacing != g0.spacing or not np.allclose(f.origin, g0.origin):
                raise InvalidParameterError("frames do not share grid geometry")

    def __len__(self):
        return len(self.fields)

    def __getitem__(self, i) -> GridField:
        return self.fields[i]

    @property
    def geometry(self) -> GridField:
        return self.fields[0]

    def norms(self) -> np.ndarray:
        return np.array([f.norm() for f in self.fields])

    def manifest(self) -> dict:
        g = self.geometry
        return {
            "times": self.times.tolist(),
            "grid": {"dims": list(g.dims), "origin": g.origin.tolist(), "spacing": g.spacing},
            "potential": self.potential.spec(),
            "dt": self.dt,
            "carrier": None if self.carrier is None else np.asarray(self.carrier, dtype=float).tolist(),
            "norms": self.norms().tolist(),
            "files": [f"frame_{i:05d}.bin" for i in range(len(self))],
        }

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        man = self.manifest()
        for name, f in zip(man["files"], self.fields):
            f.save(d / name)
        (d / "manifest.json").write_text(json.dumps(man, indent=2), encoding="utf-8")
        return d / "manifest.json"

    @classmethod
    def load(cls, directory) -> "EvolutionFrames":
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
        fields = [GridField.load(d / name, t) for name, t in zip(man["files"], man["times"])]
        spec = dict(man["potential"])
        kind = spec.pop("kind")
        pot = NoPotential() if kind in ("none", "grid") else make_potential(kind, **spec)
        carrier = man.get("carrier")
        return cls(man["times"], fields, pot, man.get("dt"),
                   None if carrier is None else np.asarray(carrier, dtype=float))


class SplitStepPropagator:
    """Strang-split propagator exp(-iT dt/2) exp(-iV dt) exp(-iT dt/2)."""

    def __init__(self, geom: GridField, potential: Potential, dt: float):
        if not dt > 0:
            raise InvalidParameterError("time step must be positive")
        self.geom = geom
        self.dt = float(dt)
        self.potential = potential
        self.half_kinetic = np.exp(-0.25j * dt * _k_squared(geom))
        self.v_grid = None if potential.is_zero else potential.on_grid(geom)
        self.potential_phase = None if self.v_grid is None else np.exp(-1j * dt * self.v_grid)

    def step(self, values: np.ndarray) -> np.ndarray:
        vk = np.fft.fftn(values) * self.half_kinetic
        if self.potential_phase is None:
            return np.fft.ifftn(vk * self.half_kinetic)
        values = np.fft.ifftn(vk) * self.potential_phase
        return np.fft.ifftn(np.fft.fftn(values) * self.half_kinetic)


def split_step_evolve(psi: GridField, potential: Potential | None, dt: float, n_steps: int,
                      stride: int = 1, *, check_boundary: bool = True,
                      boundary_tol: float = BOUNDARY_MASS_TOL) -> EvolutionFrames:
    """Propagate ``psi`` for ``n_steps`` steps, keeping every ``stride``-th frame
    (the initial field is always frame 0)."""
    potential = NoPotential() if potential is None else potential
    if n_steps < 1 or stride < 1:
        raise InvalidParameterError("n_steps and stride must be >= 1")
    prop = SplitStepPropagator(psi, potential, dt)
    values = psi.values
    times, frames = [psi.time], [psi]
    for n in range(1, n_steps + 1):
        values = prop.step(values)
        if n % stride == 0 or n == n_steps:
            if not np.all(np.isfinite(values)):
                raise NumericalBreakdownError(f"non-finite values after step {n}")
            if check_boundary:
                _check_boundary(psi, values, boundary_tol)
            t = psi.time + n * dt
            times.append(t)
            frames.append(psi.with_values(values, time=t))
    return EvolutionFrames(np.array(times), frames, potential, dt)


# ---------------------------------------------------------------------------
# continuity equation


@dataclass(frozen=True)
class ContinuityResidual:
    value: float
    time_order: int = 2
    space_order: int = 2

    def __float__(self):
        return self.value


def probability_current(psi: GridField) -> np.ndarray:
    """j = Im(psi* grad psi) on the grid, shape (3,) + dims."""
    grad = spectral_gradient(psi)
    return np.imag(np.conj(psi.values)[None] * grad)


def continuity_residual(frames: EvolutionFrames, index: int) -> ContinuityResidual:
    """max |d rho/dt + div j| over interior points, centered differences in
    time (neighbouring frames) and space."""
    if len(frames) < 3 or index < 1 or index > len(frames) - 2:
        raise InsufficientFramesError("need frames on both sides of the index")
    f_prev, f_mid, f_next = frames[index - 1], frames[index], frames[index + 1]
    dt = frames.times[index + 1] - frames.times[index - 1]
    drho = (f_next.density() - f_prev.density()) / dt
    j = probability_current(f_mid)
    h = f_mid.spacing
    div = (
        (j[0][2:, 1:-1, 1:-1] - j[0][:-2, 1:-1, 1:-1])
        + (j[1][1:-1, 2:, 1:-1] - j[1][1:-1, :-2, 1:-1])
        + (j[2][1:-1, 1:-1, 2:] - j[2][1:-1, 1:-1, :-2])
    ) / (2 * h)
    res = np.abs(drho[1:-1, 1:-1, 1:-1] + div)
    return ContinuityResidual(float(res.max()))
