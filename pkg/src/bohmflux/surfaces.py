"""Spheres, cone bins and flux integrals.

Surface integrals use product quadrature: Gauss-Legendre in cos(theta) and
uniform (periodic) or Gauss-Legendre nodes in phi, in a frame whose polar
axis is the bin axis.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .errors import BoxOverflowError, ConvergenceError, GeometryError, InvalidParameterError
from .evolution import boundary_mass
from .guidance import FrameSource, GridSource, as_source
from .sampling import speed_quantile
from .wavepacket import GridField

TWO_PI = 2 * np.pi
Z_AXIS = np.array([0.0, 0.0, 1.0])


def _frame(axis):
    """Orthonormal (e1, e2, axis) with a deterministic choice of e1."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    ref = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = ref - (ref @ a) * a
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(a, e1)
    return e1, e2, a


@dataclass(frozen=True, eq=False)
class ConeBin:
    """Solid-angle cell theta in [theta_lo, theta_hi), phi in [phi_lo, phi_hi)
    measured about ``axis``.  theta_lo = 0 with the full phi range is a
    circular cone of half-angle theta_hi."""

    axis: np.ndarray = field(default_factory=lambda: Z_AXIS.copy())
    theta_lo: float = 0.0
    theta_hi: float = np.pi
    phi_lo: float = 0.0
    phi_hi: float = TWO_PI
    label: str = ""

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=float)
        object.__setattr__(self, "axis", a / np.linalg.norm(a))
        if not (0 <= self.theta_lo < self.theta_hi <= np.pi):
            raise InvalidParameterError("need 0 <= theta_lo < theta_hi <= pi")
        if not (0 <= self.phi_lo < self.phi_hi <= TWO_PI + 1e-12):
            raise InvalidParameterError("need 0 <= phi_lo < phi_hi <= 2 pi")

    @property
    def full_azimuth(self) -> bool:
        return self.phi_hi - self.phi_lo >= TWO_PI - 1e-12

    @property
    def solid_angle(self) -> float:
        return (np.cos(self.theta_lo) - np.cos(self.theta_hi)) * (self.phi_hi - self.phi_lo)

    def angles(self, directions):
        e1, e2, a = _frame(self.axis)
        d = np.asarray(directions, dtype=float)
        d = d / np.linalg.norm(d, axis=-1, keepdims=True)
        theta = np.arccos(np.clip(d @ a, -1, 1))
        phi = np.mod(np.arctan2(d @ e2, d @ e1), TWO_PI)
        return theta, phi

    def contains(self, directions) -> np.ndarray:
        theta, phi = self.angles(directions)
        top = theta <= self.theta_hi if self.theta_hi >= np.pi else theta < self.theta_hi
        ok = (theta >= self.theta_lo) & top
        if not self.full_azimuth:
            ok &= (phi >= self.phi_lo) & (phi < self.phi_hi)
        return ok

    def nodes(self, n_theta: int, n_phi: int):
        """Unit directions and solid-angle weights covering the cell."""
        u, wu = np.polynomial.legendre.leggauss(n_theta)
        c_lo, c_hi = np.cos(self.theta_hi), np.cos(self.theta_lo)
        cos_t = 0.5 * (c_hi - c_lo) * u + 0.5 * (c_hi + c_lo)
        w_cos = 0.5 * (c_hi - c_lo) * wu
        if self.full_azimuth:
            phi = self.phi_lo + TWO_PI * (np.arange(n_phi) + 0.5) / n_phi
            w_phi = np.full(n_phi, TWO_PI / n_phi)
        else:
            v, wv = np.polynomial.legendre.leggauss(n_phi)
            span = self.phi_hi - self.phi_lo
            phi = self.phi_lo + 0.5 * span * (v + 1)
            w_phi = 0.5 * span * wv
        e1, e2, a = _frame(self.axis)
        C, P = np.meshgrid(cos_t, phi, indexing="ij")
        S = np.sqrt(1 - C**2)
        dirs = (S * np.cos(P))[..., None] * e1 + (S * np.sin(P))[..., None] * e2 + C[..., None] * a
        w = np.outer(w_cos, w_phi)
        return dirs.reshape(-1, 3), w.reshape(-1)


def cone(half_angle: float, axis=Z_AXIS, label: str = "") -> ConeBin:
    return ConeBin(axis=axis, theta_lo=0.0, theta_hi=half_angle, label=label or f"cone{np.degrees(half_angle):g}")


FULL_SPHERE = ConeBin(label="sphere")


def polar_partition(theta_edges, n_phi: int = 1, axis=Z_AXIS) -> list[ConeBin]:
    """Rings between consecutive polar edges, each split into ``n_phi``
    azimuthal sectors.  Edges must start at 0 and end at pi."""
    edges = np.asarray(theta_edges, dtype=float)
    if edges[0] != 0 or not np.isclose(edges[-1], np.pi) or np.any(np.diff(edges) <= 0):
        raise InvalidParameterError("polar edges must increase from 0 to pi")
    edges[-1] = np.pi
    bins = []
    for i in range(len(edges) - 1):
        for j in range(n_phi):
            lo, hi = TWO_PI * j / n_phi, TWO_PI * (j + 1) / n_phi
            bins.append(ConeBin(axis=axis, theta_lo=edges[i], theta_hi=edges[i + 1],
                                phi_lo=lo, phi_hi=hi, label=f"r{i}s{j}"))
    return bins


def assign_bins(bins, directions) -> np.ndarray:
    """Index of the bin containing each direction (-1 if none)."""
    d = np.asarray(directions, dtype=float)
    out = np.full(len(d), -1, dtype=int)
    for i, b in enumerate(bins):
        m = (out < 0) & b.contains(d)
        out[m] = i
    return out


@dataclass(frozen=True)
class SphereSpec:
    radius: float
    n_theta: int = 64
    n_phi: int = 128

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameterError("sphere radius must be positive")

    def nodes(self, bin: ConeBin = FULL_SPHERE):
        dirs, w = bin.nodes(self.n_theta, self.n_phi)
        return self.radius * dirs, dirs, self.radius**2 * w

    def doubled(self) -> "SphereSpec":
        return SphereSpec(self.radius, 2 * self.n_theta, 2 * self.n_phi)


# ---------------------------------------------------------------------------
# flux integrals


def _normal_current(src, x, n, t):
    cur = getattr(src, "current", None)
    if cur is not None:
        j = cur(x, t)
    else:
        p, g = src.evaluate(x, t)
        j = np.imag(np.conj(p)[..., None] * g)
    return np.sum(j * n, axis=-1)


def _check_inside(src, sphere):
    geom = None
    if isinstance(src, FrameSource):
        geom = src.geom
    elif isinstance(src, GridSource):
        geom = src.field
    if geom is not None:
        lo, hi = geom.origin, geom.upper()
        if np.any(-sphere.radius <= lo + geom.spacing) or np.any(sphere.radius >= hi - geom.spacing):
            raise GeometryError(f"sphere R={sphere.radius} exceeds grid interior")


@dataclass
class FluxTable:
    """Time-integrated flux per (bin, time window)."""

    radius: float
    bins: list
    time_edges: np.ndarray
    signed: np.ndarray  # (n_bins, n_windows)
    absolute: np.ndarray
    error: np.ndarray
    converged: bool = True

    @property
    def signed_total(self) -> np.ndarray:
        return self.signed.sum(axis=1)

    @property
    def absolute_total(self) -> np.ndarray:
        return self.absolute.sum(axis=1)

    def inward_fraction(self) -> float:
        inward = 0.5 * (self.absolute - self.signed).sum()
        outward = 0.5 * (self.absolute + self.signed).sum()
        return float(inward / outward) if outward > 0 else 0.0

    def rows(self):
        for i, b in enumerate(self.bins):
            for k in range(len(self.time_edges) - 1):
                yield (self.radius, b.label or str(i), self.time_edges[k], self.time_edges[k + 1],
                       self.signed[i, k], self.absolute[i, k], self.error[i, k])

    def to_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            if not append:
                w.writerow(["R", "bin_id", "t_lo", "t_hi", "signed_flux", "abs_flux",
                            "quadrature_error_est"])
            for r in self.rows():
                w.writerow([r[0], r[1], *(repr(float(v)) for v in r[2:])])


def _flux_windows(src, sphere, bins, time_edges, rel_tol, abs_tol):
    xs, ns, ws, owner = [], [], [], []
    for i, b in enumerate(bins):
        x, n, w = sphere.nodes(b)
        xs.append(x)
        ns.append(n)
        ws.append(w)
        owner.append(np.full(len(w), i))
    X = np.concatenate(xs)
    N = np.concatenate(ns)
    W = np.concatenate(ws)
    O = np.concatenate(owner)
    nb = len(bins)

    def surface(t):
        jn = _normal_current(src, X, N, np.full(len(X), t))
        s = np.bincount(O, weights=W * jn, minlength=nb)
        a = np.bincount(O, weights=W * np.abs(jn), minlength=nb)
        return np.concatenate([s, a])

    nw = len(time_edges) - 1
    signed = np.zeros((nb, nw))
    absolute = np.zeros((nb, nw))
    error = np.zeros((nb, nw))
    if isinstance(src, FrameSource):
        # cubic-in-time interpolant: 4-point Gauss-Legendre per frame interval is exact
        # for the signed flux
        g, gw = np.polynomial.legendre.leggauss(4)
        for k in range(nw):
            for ta, tb in src.intervals(time_edges[k], time_edges[k + 1]):
                src.prepare(ta, tb)
                for gi, gwi in zip(g, gw):
                    t = 0.5 * (tb - ta) * gi + 0.5 * (tb + ta)
                    val = 0.5 * (tb - ta) * gwi * surface(t)
                    signed[:, k] += val[:nb]
                    absolute[:, k] += val[nb:]
        return signed, absolute, error
    # one adaptive pass over the whole span; window edges are breakpoints and
    # the integrand carries one slot per window
    ta, tb = time_edges[0], time_edges[-1]
    pts = np.union1d(time_edges[1:-1], np.linspace(ta, tb, 17)[1:-1])

    def windowed(t):
        k = min(max(int(np.searchsorted(time_edges, t, side="right")) - 1, 0), nw - 1)
        out = np.zeros((nw, 2 * nb))
        out[k] = surface(t)
        return out.ravel()

    val, err = quad_vec(windowed, ta, tb, epsabs=abs_tol, epsrel=rel_tol, points=pts,
                        norm="max", limit=4000)
    val = val.reshape(nw, 2 * nb)
    signed[:] = val[:, :nb].T
    absolute[:] = val[:, nb:].T
    error[:] = err
    return signed, absolute, error


def flux_table(source, sphere: SphereSpec, bins, time_edges, *, rel_tol: float = 1e-10,
               abs_tol: float = 1e-12, check_convergence: bool = False,
               tolerance: float = 1e-6) -> FluxTable:
    """Signed and absolute time-integrated flux through each bin of the sphere
    for each window between consecutive ``time_edges``."""
    src = as_source(source)
    _check_inside(src, sphere)
    time_edges = np.asarray(time_edges, dtype=float)
    if np.any(np.diff(time_edges) <= 0):
        raise InvalidParameterError("time edges must increase")
    bins = list(bins)
    signed, absolute, error = _flux_windows(src, sphere, bins, time_edges, rel_tol, abs_tol)
    converged = True
    if check_convergence:
        s2, a2, _ = _flux_windows(src, sphere.doubled(), bins, time_edges, rel_tol / 4, abs_tol / 4)
        diff = np.maximum(np.abs(s2 - signed), np.abs(a2 - absolute))
        error = np.maximum(error, diff)
        converged = bool(np.all(diff <= tolerance))
    return FluxTable(sphere.radius, bins, time_edges, signed, absolute, error, converged)


@dataclass(frozen=True)
class FluxResult:
    signed: float
    absolute: float
    error: float
    converged: bool

    @property
    def inward(self) -> float:
        return 0.5 * (self.absolute - self.signed)

    @property
    def outward(self) -> float:
        return 0.5 * (self.absolute + self.signed)


def flux_across_surface(source, sphere: SphereSpec, bin: ConeBin = FULL_SPHERE, t_span=None,
                        *, check_convergence: bool = False, tolerance: float = 1e-6,
                        strict: bool = False, **kw) -> FluxResult:
    """Integral of j.n over bin x sphere and the time span, plus the
    integral of |j.n|.  With ``strict`` a non-converged quadrature raises."""
    table = flux_table(source, sphere, [bin], t_span, check_convergence=check_convergence,
                       tolerance=tolerance, **kw)
    if strict and not table.converged:
        raise ConvergenceError("flux quadrature changed by more than the tolerance on doubling")
    return FluxResult(float(table.signed.sum()), float(table.absolute.sum()),
                      float(table.error.sum()), table.converged)


def escape_horizon(psi, radius: float, quantile: float = 1e-3) -> float:
    """T* = 4 R / v_min with v_min the given quantile of |v| under |psi_hat|^2."""
    return 4.0 * radius / speed_quantile(psi, quantile)


# ---------------------------------------------------------------------------
# asymptotics and cone probabilities


def asymptotic_current(psi_hat, x, t):
    """Large-time free current (x/t) t^-3 |psi_hat(x/t)|^2; radial by form."""
    if not np.all(np.asarray(t) > 0):
        raise InvalidParameterError("asymptotic current needs t > 0")
    amp = getattr(psi_hat, "momentum_amplitude", psi_hat)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    tt = t[..., None] if t.ndim else t
    v = x / tt
    return v * (t**-3 * np.abs(amp(v)) ** 2)[..., None]


class AsymptoticSource:
    """Field source whose current is the asymptotic free current."""

    def __init__(self, psi):
        self.psi = psi

    def current(self, x, t):
        return asymptotic_current(self.psi, x, t)

    def intervals(self, t0, t1):
        return [(t0, t1)]


def momentum_probabilities(psi, bins, n_r: int = 96, n_theta: int = 48, n_phi: int = 64,
                           k_range=None) -> np.ndarray:
    """Integral of |psi_hat|^2 over each cone (spherical quadrature in k)."""
    packets = getattr(psi, "packets", (psi,))
    if k_range is None:
        k_lo = max(0.0, min(np.linalg.norm(p.k0) - 6.0 / p.sigma for p in packets))
        k_hi = max(np.linalg.norm(p.k0) + 6.0 / p.sigma for p in packets)
    else:
        k_lo, k_hi = k_range
    # three radial panels of Gauss-Legendre nodes
    u, wu = np.polynomial.legendre.leggauss(n_r // 3)
    edges = np.linspace(k_lo, k_hi, 4)
    r = np.concatenate([0.5 * (b - a) * u + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    wr = np.concatenate([0.5 * (b - a) * wu for a, b in zip(edges[:-1], edges[1:])])
    out = []
    for b in bins:
        d, w = b.nodes(n_theta, n_phi)
        k = r[:, None, None] * d[None]
        dens = np.abs(psi.momentum_amplitude(k)) ** 2
        out.append(float(np.sum(dens * (wr * r**2)[:, None] * w[None])))
    return np.array(out)


def momentum_cone_probability(psi, bin: ConeBin, **kw) -> float:
    return float(momentum_probabilities(psi, [bin], **kw)[0])


def cone_probability(psi, bin: ConeBin, t: float = 0.0, n_r: int = 120, n_theta: int = 48,
                     n_phi: int = 64, boundary_tol: float = 1e-6) -> float:
    """Integral of |psi_t|^2 over the cone (measured from the origin)."""
    u, wu = np.polynomial.legendre.leggauss(n_r // 3)
    d, w = bin.nodes(n_theta, n_phi)
    if isinstance(psi, GridField):
        from .interpolate import trilinear

        m = boundary_mass(psi)
        if m > boundary_tol:
            raise BoxOverflowError(f"cone mass touches grid boundary ({m:.2g})")
        r_hi = float(min(-psi.origin.max(), psi.upper().min())) - psi.spacing
        dens_fn = lambda x: np.abs(trilinear(psi, psi.values, x)) ** 2
        r_lo = 0.0
    else:
        packets = getattr(psi, "packets", (psi,))
        reach = [np.linalg.norm(p.center_at(t)) + 10 * p.width_at(t) for p in packets]
        r_lo = 0.0
        r_hi = max(reach)
        dens_fn = lambda x: np.abs(psi.evaluate(x, t)[0]) ** 2
    edges = np.linspace(r_lo, r_hi, 4)
    r = np.concatenate([0.5 * (b - a) * u + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
    wr = np.concatenate([0.5 * (b - a) * wu for a, b in zip(edges[:-1], edges[1:])])
    x = r[:, None, None] * d[None]
    dens = dens_fn(x)
    return float(np.sum(dens * (wr * r**2)[:, None] * w[None]))
