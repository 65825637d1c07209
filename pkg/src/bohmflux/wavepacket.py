"""Wave functions: analytic Gaussian packets, simple analytic waves and
sampled 3D grid fields.

Units are hbar = m = 1 throughout.  The momentum representation uses the
symmetric convention

    psi_hat(k) = (2 pi)^(-3/2) * integral exp(-i k.x) psi(x) d^3x.

Every analytic wave implements ``evaluate(x, t)`` returning ``(psi, grad)``
for points ``x`` of shape ``(..., 3)``; ``t`` is the time elapsed under free
evolution and may be a scalar or broadcast against ``x.shape[:-1]``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, ResolutionError

__all__ = [
    "GaussianPacket",
    "Superposition",
    "PlaneWave",
    "OutgoingSphericalWave",
    "StandingWave",
    "GridField",
    "make_gaussian",
    "momentum_amplitude",
    "density",
    "norm",
    "sample_to_grid",
    "grid_geometry",
    "default_half_width",
]

BOUNDARY_AMPLITUDE = 1e-8


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


def _times(t, x):
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return t
    return np.broadcast_to(t, x.shape[:-1])


@dataclass(frozen=True, eq=False)
class GaussianPacket:
    """Isotropic Gaussian packet, freely evolved by ``elapsed``.

    At ``elapsed = 0``::

        psi(x) = amplitude * (2 pi sigma^2)^(-3/4)
                 * exp(-|x - center|^2 / (4 sigma^2)) * exp(i k0.x)
    """

    center: np.ndarray
    k0: np.ndarray
    sigma: float
    amplitude: complex = 1.0
    elapsed: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        object.__setattr__(self, "center", _vec3(self.center))
        object.__setattr__(self, "k0", _vec3(self.k0))
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        object.__setattr__(self, "elapsed", float(self.elapsed))

    @property
    def packets(self) -> tuple["GaussianPacket", ...]:
        return (self,)

    def evolved(self, t: float) -> "GaussianPacket":
        return replace(self, elapsed=self.elapsed + t)

    def center_at(self, t: float = 0.0) -> np.ndarray:
        return self.center + self.k0 * (self.elapsed + t)

    def width_at(self, t: float = 0.0) -> float:
        tau = self.elapsed + t
        return self.sigma * np.sqrt(1.0 + tau**2 / (4.0 * self.sigma**4))

    def peak_density(self, t: float = 0.0) -> float:
        return abs(self.amplitude) ** 2 * (2 * np.pi * self.width_at(t) ** 2) ** -1.5

    def evaluate(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        tau = self.elapsed + _times(t, x)
        s2 = self.sigma**2
        A = s2 + 0.5j * tau
        B = x - self.center - self.k0 * np.expand_dims(tau, -1)
        pref = (
            self.amplitude
            * (2 * np.pi) ** -1.5
            * (2 * s2 / np.pi) ** 0.75
            * (np.pi / A) ** 1.5
        )
        k0 = self.k0
        phase = -np.sum(B * B, axis=-1) / (4 * A) + 1j * (x @ k0) - 0.5j * (k0 @ k0) * tau
        psi = pref * np.exp(phase)
        grad = psi[..., None] * (-B / (2 * np.expand_dims(A, -1)) + 1j * k0)
        return psi, grad

    def __call__(self, x, t=0.0):
        return self.evaluate(x, t)[0]

    def momentum_amplitude(self, k):
        k = np.asarray(k, dtype=float)
        q = k - self.k0
        s2 = self.sigma**2
        return (
            self.amplitude
            * (2 * s2 / np.pi) ** 0.75
            * np.exp(-s2 * np.sum(q * q, axis=-1))
            * np.exp(-1j * (q @ self.center))
            * np.exp(-0.5j * np.sum(k * k, axis=-1) * self.elapsed)
        )

    def overlap(self, other: "GaussianPacket") -> complex:
        """<self|other>, evaluated in closed form in momentum space."""
        si, sj = self.sigma**2, other.sigma**2
        a = si + sj
        # free-evolution phases exp(-i k^2 t / 2) only enter the quadratic term
        a = a + 0.5j * (other.elapsed - self.elapsed)
        b = 2 * si * self.k0 + 2 * sj * other.k0 + 1j * (self.center - other.center)
        c0 = (
            -si * self.k0**2
            - sj * other.k0**2
            - 1j * self.k0 * self.center
            + 1j * other.k0 * other.center
        )
        per_axis = np.sqrt(np.pi / a) * np.exp(b**2 / (4 * a) + c0)
        pref = (2 * si / np.pi) ** 0.75 * (2 * sj / np.pi) ** 0.75
        return complex(np.conj(self.amplitude) * other.amplitude * pref * np.prod(per_axis))

    def norm(self) -> float:
        return abs(self.amplitude)


@dataclass(frozen=True, eq=False)
class Superposition:
    """Linear combination of Gaussian packets (weights live in each packet)."""

    packets: tuple

    def __post_init__(self):
        if len(self.packets) == 0:
            raise InvalidParameterError("empty superposition")
        object.__setattr__(self, "packets", tuple(self.packets))

    def evolved(self, t: float) -> "Superposition":
        return Superposition(tuple(p.evolved(t) for p in self.packets))

    def evaluate(self, x, t=0.0):
        psi, grad = self.packets[0].evaluate(x, t)
        for p in self.packets[1:]:
            a, b = p.evaluate(x, t)
            psi = psi + a
            grad = grad + b
        return psi, grad

    def __call__(self, x, t=0.0):
        return self.evaluate(x, t)[0]

    def momentum_amplitude(self, k):
        return sum(p.momentum_amplitude(k) for p in self.packets)

    def norm(self) -> float:
        total = sum(
            pi.overlap(pj) for pi in self.packets for pj in self.packets
        )
        return float(np.sqrt(max(total.real, 0.0)))

    def normalized(self) -> "Superposition":
        n = self.norm()
        return Superposition(tuple(replace(p, amplitude=p.amplitude / n) for p in self.packets))

    def peak_density(self, t=0.0):
        """Largest density among the component centres (per entry of ``t``)."""
        t = np.asarray(t, dtype=float)
        # centres of every component at every time: shape t.shape + (m, 3)
        centers = np.stack([p.center + p.k0 * (p.elapsed + t[..., None]) for p in self.packets],
                           axis=-2)
        rho = np.max(np.abs(self(centers, t[..., None])) ** 2, axis=-1)
        return float(rho) if t.ndim == 0 else rho


@dataclass(frozen=True, eq=False)
class PlaneWave:
    """exp(i k.x - i |k|^2 t / 2); not normalizable."""

    k: np.ndarray
    amplitude: complex = 1.0

    def __post_init__(self):
        object.__setattr__(self, "k", _vec3(self.k))

    def evaluate(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        t = _times(t, x)
        psi = self.amplitude * np.exp(1j * (x @ self.k) - 0.5j * (self.k @ self.k) * t)
        return psi, psi[..., None] * (1j * self.k)

    def __call__(self, x, t=0.0):
        return self.evaluate(x, t)[0]

    def peak_density(self, t: float = 0.0) -> float:
        return abs(self.amplitude) ** 2


@dataclass(frozen=True, eq=False)
class OutgoingSphericalWave:
    """f exp(i k r) / r, the far-field scattered wave (stationary, t ignored
    apart from the global energy phase)."""

    f: complex
    k: float

    def evaluate(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        t = _times(t, x)
        r = np.linalg.norm(x, axis=-1)
        psi = self.f * np.exp(1j * self.k * r - 0.5j * self.k**2 * t) / r
        radial = (1j * self.k - 1.0 / r) / r
        return psi, psi[..., None] * radial[..., None] * x

    def __call__(self, x, t=0.0):
        return self.evaluate(x, t)[0]


@dataclass(frozen=True, eq=False)
class StandingWave:
    """prod_i sin(k_i x_i) exp(-i E t): a real stationary state (v = 0)."""

    k: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "k", _vec3(self.k))

    def evaluate(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        t = _times(t, x)
        s = np.sin(x * self.k)
        c = np.cos(x * self.k)
        phase = np.exp(-0.5j * (self.k @ self.k) * t)
        psi = np.prod(s, axis=-1) * phase
        grad = np.stack(
            [
                self.k[0] * c[..., 0] * s[..., 1] * s[..., 2],
                self.k[1] * s[..., 0] * c[..., 1] * s[..., 2],
                self.k[2] * s[..., 0] * s[..., 1] * c[..., 2],
            ],
            axis=-1,
        ) * np.expand_dims(phase, -1)
        return psi, grad

    def __call__(self, x, t=0.0):
        return self.evaluate(x, t)[0]

    def peak_density(self, t: float = 0.0) -> float:
        return 1.0


def make_gaussian(center, k0, sigma) -> GaussianPacket:
    """Normalized isotropic Gaussian packet."""
    return GaussianPacket(center=center, k0=k0, sigma=sigma)


# ---------------------------------------------------------------------------
# grid fields

_HEADER = struct.Struct("<3q3dd")


@dataclass(frozen=True, eq=False)
class GridField:
    """Complex field sampled at ``origin + spacing * (i, j, l)``.

    ``values`` is indexed ``[ix, iy, iz]``; the binary format writes it with
    x varying fastest.  The box is treated as periodic by the spectral
    operations.
    """

    origin: np.ndarray
    spacing: float
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "origin", _vec3(self.origin))
        values = np.asarray(self.values, dtype=complex)
        if values.ndim != 3 or min(values.shape) < 8:
            raise InvalidParameterError(f"grid needs >= 8 points per axis, got {values.shape}")
        if not self.spacing > 0:
            raise InvalidParameterError("grid spacing must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    def axes(self) -> list[np.ndarray]:
        return [self.origin[i] + self.spacing * np.arange(n) for i, n in enumerate(self.dims)]

    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    def mesh(self):
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        return np.stack(self.mesh(), axis=-1)

    def wavenumbers(self) -> list[np.ndarray]:
        return [2 * np.pi * np.fft.fftfreq(n, d=self.spacing) for n in self.dims]

    def nyquist(self) -> float:
        return np.pi / self.spacing

    def with_values(self, values, time=None) -> "GridField":
        return GridField(self.origin, self.spacing, values, self.time if time is None else time)

    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.density()) * self.cell_volume))

    def normalized(self) -> "GridField":
        return self.with_values(self.values / self.norm())

    def momentum_grid(self):
        """Return (kx, ky, kz, psi_hat) on the FFT wavenumber grid."""
        kx, ky, kz = self.wavenumbers()
        phase = np.exp(-1j * self.origin[0] * kx)[:, None, None]
        phase = phase * np.exp(-1j * self.origin[1] * ky)[None, :, None]
        phase = phase * np.exp(-1j * self.origin[2] * kz)[None, None, :]
        psi_hat = np.fft.fftn(self.values) * phase * self.cell_volume * (2 * np.pi) ** -1.5
        return kx, ky, kz, psi_hat

    def momentum_amplitude(self, k):
        """Riemann-sum transform evaluated at arbitrary momenta."""
        k = np.asarray(k, dtype=float)
        flat = k.reshape(-1, 3)
        if np.any(np.abs(flat) > self.nyquist()):
            raise ResolutionError(
                f"|k| component {np.abs(flat).max():.3g} beyond Nyquist {self.nyquist():.3g}"
            )
        ax, ay, az = self.axes()
        ex = np.exp(-1j * flat[:, 0:1] * ax)
        ey = np.exp(-1j * flat[:, 1:2] * ay)
        ez = np.exp(-1j * flat[:, 2:3] * az)
        out = np.empty(len(flat), dtype=complex)
        for a in range(len(flat)):
            t1 = np.tensordot(ex[a], self.values, axes=(0, 0))
            t2 = ey[a] @ t1
            out[a] = ez[a] @ t2
        out *= self.cell_volume * (2 * np.pi) ** -1.5
        return out.reshape(k.shape[:-1])

    # -- binary I/O ---------------------------------------------------------
    def to_bytes(self) -> bytes:
        header = _HEADER.pack(*self.dims, *self.origin, self.spacing)
        flat = np.ravel(self.values, order="F")
        inter = np.empty(2 * flat.size, dtype="<f8")
        inter[0::2] = flat.real
        inter[1::2] = flat.imag
        return header + inter.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes, time: float = 0.0) -> "GridField":
        nx, ny, nz, ox, oy, oz, h = _HEADER.unpack_from(data, 0)
        raw = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
        if raw.size != 2 * nx * ny * nz:
            raise InvalidParameterError("payload size does not match header dims")
        values = (raw[0::2] + 1j * raw[1::2]).reshape((nx, ny, nz), order="F")
        return cls((ox, oy, oz), h, values, time)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, time: float = 0.0) -> "GridField":
        return cls.from_bytes(Path(path).read_bytes(), time)


def grid_geometry(lo, hi, spacing: float):
    """Origin and dims of the grid with nodes at lo + spacing*i covering
    [lo, hi] per axis.  Dims are rounded up to even numbers."""
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (3,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (3,))
    dims = np.ceil((hi - lo) / spacing).astype(int) + 1
    dims += dims % 2
    return lo.copy(), tuple(int(d) for d in dims)


def default_half_width(packet) -> float:
    """Cube half-width (about the origin) with |psi| < 1e-8 on the faces at t=0."""
    hw = 0.0
    for p in getattr(packet, "packets", (packet,)):
        peak = abs(p.amplitude) * (2 * np.pi * p.sigma**2) ** -0.75
        reach = 2 * p.sigma * np.sqrt(max(np.log(peak / BOUNDARY_AMPLITUDE), 0.0))
        hw = max(hw, float(np.max(np.abs(p.center))) + reach)
    return hw


def sample_to_grid(psi, origin, spacing: float, dims, t: float = 0.0) -> GridField:
    """Sample an analytic wave on a grid."""
    geom = GridField(origin, spacing, np.zeros(dims, dtype=complex))
    pts = geom.points()
    values = psi.evaluate(pts, t)[0]
    return geom.with_values(values, time=t)


# ---------------------------------------------------------------------------
# representation-independent helpers


def momentum_amplitude(psi, k):
    """psi_hat(k) for analytic packets or grid fields."""
    return psi.momentum_amplitude(k)


def density(psi, x, t: float = 0.0):
    if isinstance(psi, GridField):
        from .interpolate import trilinear

        return np.abs(trilinear(psi, psi.values, x)) ** 2
    return np.abs(psi.evaluate(x, t)[0]) ** 2


def norm(psi) -> float:
    return psi.norm()
