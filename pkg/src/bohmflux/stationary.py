"""Stationary scattering by central potentials: Numerov radial solutions,
phase shifts, partial-wave amplitude and cross sections."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import eval_legendre, spherical_jn, spherical_yn

from .errors import ConvergenceError, GeometryError, InvalidParameterError
from .evolution import Potential

PHASE_TOL = 1e-8
RESCALE = 1e100


def _riccati(l, x):
    """Riccati-Bessel x j_l(x), x y_l(x) and their x-derivatives."""
    j = spherical_jn(l, x)
    y = spherical_yn(l, x)
    jd = spherical_jn(l, x, derivative=True)
    yd = spherical_yn(l, x, derivative=True)
    return x * j, x * y, j + x * jd, y + x * yd


@dataclass
class RadialSolution:
    r: np.ndarray
    u: np.ndarray  # (n_l, n_r), arbitrary normalization per l
    du: np.ndarray  # u'(r_max) per l
    l: np.ndarray
    k: float
    step: float

    @property
    def log_derivative(self) -> np.ndarray:
        return self.du / self.u[:, -1]


def _segments(potential: Potential, r_max: float):
    cuts = [b for b in potential.breakpoints if 0 < b < r_max]
    return [0.0, *cuts, r_max]


def _w(potential, lo, hi, ls, k, r):
    # potential evaluated inside [lo, hi] only (one-sided limits at breakpoints)
    eps = 1e-12 * max(1.0, hi)
    rc = np.clip(r, lo + eps, hi - eps)
    v = np.asarray(potential.radial(rc), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        cent = (ls * (ls + 1))[:, None] / np.asarray(r, dtype=float)[None, :] ** 2
    return cent + (2 * v - k * k)[None, :]


def _numerov_segment(u_a, u_b, w, h):
    """Numerov recurrence over a segment; u_a, u_b are the first two values
    per l, ``w`` is (n_l, n) on the segment nodes.  Returns all values."""
    n_l, n = w.shape
    u = np.empty((n_l, n))
    u[:, 0], u[:, 1] = u_a, u_b
    scale = np.zeros(n_l)  # number of RESCALE divisions per l
    T = 1.0 - (h * h / 12.0) * w
    S = 2.0 + (10.0 * h * h / 12.0) * w
    for i in range(1, n - 1):
        u[:, i + 1] = (S[:, i] * u[:, i] - T[:, i - 1] * u[:, i - 1]) / T[:, i + 1]
        big = np.abs(u[:, i + 1]) > RESCALE
        if big.any():
            u[big, : i + 2] /= RESCALE
            scale[big] += 1
    return u, scale


def radial_solve(potential: Potential, k: float, l, r_max: float | None = None,
                 h: float = 0.01, keep: bool = True) -> RadialSolution:
    """Solve u'' = [l(l+1)/r^2 + 2V - k^2] u from u ~ r^(l+1) with fixed-step
    Numerov, restarting at discontinuities of the potential.

    ``h`` is the step where |2V - k^2| <= 100; segments with a larger local
    wavenumber use a proportionally finer step."""
    if not k > 0:
        raise InvalidParameterError("k must be positive")
    ls = np.atleast_1d(np.asarray(l, dtype=int))
    if r_max is None:
        r_max = potential.r_cut + 1.0
    if r_max <= potential.r_cut:
        raise GeometryError("r_max must exceed the potential cutoff")
    edges = _segments(potential, r_max)
    rs, us = [], []
    u_prev = du_prev = None
    for si, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        h_seg = h / max(1.0, np.sqrt(_wmax(potential, lo, hi, k)) / 10.0)
        n = max(int(np.ceil((hi - lo) / h_seg)), 4)
        hs = (hi - lo) / n
        r = lo + hs * np.arange(n + 2)  # one node beyond hi for the derivative
        w = _w(potential, lo, hi, ls, k, r)
        if si == 0:
            v0 = float(potential.radial(np.array([min(1e-12, hi / 2)]))[0])
            u1 = _origin_series(ls, 2 * v0 - k * k, hs)
            u2 = _origin_series(ls, 2 * v0 - k * k, 2 * hs)
            u = np.empty((len(ls), n + 2))
            u[:, 0] = 0.0
            u[:, 1:], scale = _numerov_segment(u1, u2, w[:, 1:], hs)
        else:
            u_b = _restart(potential, lo, hi, ls, k, u_prev, du_prev, hs)
            u, scale = _numerov_segment(u_prev, u_b, w, hs)
        # u'(hi) from the O(h^4) Numerov-consistent difference formula
        Tp = 1 - hs * hs * w[:, n + 1] / 6
        Tm = 1 - hs * hs * w[:, n - 1] / 6
        du = (Tp * u[:, n + 1] - Tm * u[:, n - 1]) / (2 * hs)
        u_prev, du_prev = u[:, n], du
        if keep:
            # earlier segments must follow any overflow rescaling done here
            with np.errstate(under="ignore"):
                us = [seg * (RESCALE ** -scale)[:, None] for seg in us]
            last = si == len(edges) - 2
            rs.append(r[: n + 1] if last else r[:n])
            us.append(u[:, : n + 1] if last else u[:, :n])
    if keep:
        r_all = np.concatenate(rs)
        u_all = np.concatenate(us, axis=1)
    else:
        r_all = np.array([r_max])
        u_all = u_prev[:, None]
    return RadialSolution(r_all, u_all, du_prev, ls, float(k), float(h))


def _origin_series(ls, c, r, n_terms: int = 8):
    """Regular solution r^(l+1) sum a_m r^(2m) of u'' = (l(l+1)/r^2 + c) u,
    normalized to a_0 = 1 (exact for a constant potential near the origin)."""
    term = np.ones(len(ls))
    total = np.ones(len(ls))
    for m in range(1, n_terms + 1):
        term = term * c * r * r / ((2 * m + ls + 1) * (2 * m + ls) - ls * (ls + 1))
        total = total + term
    return r ** (ls + 1.0) * total


def _restart(potential, lo, hi, ls, k, u0, du0, hs):
    """Second starting value of a segment from an accurate short ODE solve."""
    n_l = len(ls)

    def rhs(r, y):
        w = _w(potential, lo, hi, ls, k, np.array([r]))[:, 0]
        return np.concatenate([y[n_l:], w * y[:n_l]])

    sol = solve_ivp(rhs, (lo, lo + hs), np.concatenate([u0, du0]), method="DOP853",
                    rtol=1e-13, atol=1e-300)
    return sol.y[:n_l, -1]


def _phase_from(ls, k, r, u, du):
    jh, yh, jd, yd = _riccati(ls, k * r)
    num = k * jd * u - du * jh
    den = k * yd * u - du * yh
    delta = np.arctan2(num, den)
    # u ~ jh cos(d) - yh sin(d): fold into (-pi/2, pi/2]
    delta = np.where(delta > np.pi / 2, delta - np.pi, delta)
    delta = np.where(delta <= -np.pi / 2, delta + np.pi, delta)
    return delta


def phase_shifts_at(potential: Potential, k: float, ls, h: float, r_max: float | None = None):
    sol = radial_solve(potential, k, ls, r_max, h, keep=False)
    return _phase_from(sol.l, k, sol.r[-1], sol.u[:, -1], sol.du)


def converged_phase_shifts(potential: Potential, k: float, ls, r_max=None, tol: float = PHASE_TOL,
                           h0: float | None = None, max_halvings: int = 10):
    """Phase shifts with step halving until successive results agree to
    ``tol``; the returned value is Richardson-extrapolated (4th order)."""
    h = 0.02 if h0 is None else h0
    prev = phase_shifts_at(potential, k, ls, h, r_max)
    for _ in range(max_halvings):
        h /= 2
        cur = phase_shifts_at(potential, k, ls, h, r_max)
        diff = _wrap(cur - prev)
        if np.max(np.abs(diff)) < tol:
            return cur + diff / 15.0, h
        prev = cur
    raise ConvergenceError(f"phase shifts not converged to {tol} after step halving")


def _wrap(d):
    return (d + np.pi / 2) % np.pi - np.pi / 2


def _wmax(potential, lo, hi, k):
    eps = 1e-12 * max(1.0, hi)
    r = np.linspace(lo + eps, hi - eps, 257)
    return float(np.max(np.abs(2 * np.asarray(potential.radial(r)) - k * k)))


@dataclass
class PhaseShiftTable:
    k: float
    deltas: np.ndarray
    converged: bool
    step: float = 0.0
    potential: dict = field(default_factory=dict)

    @property
    def l_max(self) -> int:
        return len(self.deltas) - 1

    def amplitude(self, theta) -> np.ndarray:
        """Partial-wave scattering amplitude f(theta) (azimuth-independent)."""
        theta = np.asarray(theta, dtype=float)
        c = np.cos(theta)
        d = self.deltas
        f = np.zeros(np.shape(c), dtype=complex)
        for l, dl in enumerate(d):
            f = f + (2 * l + 1) * np.exp(1j * dl) * np.sin(dl) * eval_legendre(l, c)
        return f / self.k

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "l", "delta"])
            for l, dl in enumerate(self.deltas):
                w.writerow([repr(self.k), l, repr(float(dl))])

    def metadata(self) -> dict:
        return {"k": self.k, "l_max": self.l_max, "converged": self.converged,
                "step": self.step, "potential": self.potential, "tolerance": PHASE_TOL}


def phase_shifts(potential: Potential, k: float, l_max: int | None = None, *,
                 tol: float = PHASE_TOL, r_max: float | None = None,
                 max_l: int = 200) -> PhaseShiftTable:
    """delta_l for l = 0..l_max; with ``l_max=None`` it grows until
    |delta_l| < tol."""
    if l_max is not None:
        d, h = converged_phase_shifts(potential, k, np.arange(l_max + 1), r_max, tol)
        return PhaseShiftTable(float(k), d, bool(abs(d[-1]) < tol), h, potential.spec())
    n = int(np.ceil(k * max(potential.r_cut, 1.0))) + 8
    while True:
        d, h = converged_phase_shifts(potential, k, np.arange(n + 1), r_max, tol)
        small = np.nonzero(np.abs(d) < tol)[0]
        # first l from which all remaining shifts are negligible
        tail = [i for i in small if np.all(np.abs(d[i:]) < tol)]
        if tail and tail[0] < n:
            lm = max(int(tail[0]), 0)
            return PhaseShiftTable(float(k), d[: lm + 1], True, h, potential.spec())
        if n >= max_l:
            return PhaseShiftTable(float(k), d, False, h, potential.spec())
        n = min(2 * n, max_l)


def phase_shift_scan(potential: Potential, ks, l_max: int) -> np.ndarray:
    """delta_l(k) on a k grid, unwrapped to be continuous in k; shape (n_k, l_max+1)."""
    rows = [converged_phase_shifts(potential, k, np.arange(l_max + 1))[0] for k in ks]
    d = np.array(rows)
    return np.unwrap(2 * d, axis=0) / 2


def differential_cross_section(table: PhaseShiftTable, theta) -> np.ndarray:
    """|f(theta)|^2."""
    return np.abs(table.amplitude(theta)) ** 2


def total_cross_section(table: PhaseShiftTable, n_nodes: int | None = None) -> float:
    """Integral of |f|^2 over the sphere by Gauss-Legendre quadrature in cos(theta)."""
    n = n_nodes or (table.l_max + 8)
    x, w = np.polynomial.legendre.leggauss(n)
    return float(2 * np.pi * np.sum(w * differential_cross_section(table, np.arccos(x))))


def optical_theorem_residual(table: PhaseShiftTable) -> float:
    """|(4 pi/k) Im f(0) - integral |f|^2 dOmega|."""
    lhs = 4 * np.pi / table.k * float(np.imag(table.amplitude(0.0)))
    return abs(lhs - total_cross_section(table))


def square_well_s_wave(v0: float, a: float, k: float) -> float:
    """Closed-form s-wave phase shift of V = v0 (r < a), folded to (-pi/2, pi/2]."""
    q2 = k * k - 2 * v0
    if q2 > 0:
        kap = np.sqrt(q2)
        d = -k * a + np.arctan(k / kap * np.tan(kap * a))
    elif q2 < 0:
        kap = np.sqrt(-q2)
        d = -k * a + np.arctan(k / kap * np.tanh(kap * a))
    else:
        d = -k * a + np.arctan(k * a)
    return float(_wrap(d))


@dataclass
class AsymptoticFit:
    r_shell: tuple
    f_fit: np.ndarray
    f_partial: np.ndarray
    residual: float  # rms of r * (leading-order fit - wave), in amplitude units
    theta: np.ndarray
    max_f_error: float


def scattered_wave(table: PhaseShiftTable, r, theta) -> np.ndarray:
    """psi - exp(i k z) outside the potential from the partial-wave sum:
    sum (2l+1) i^l (exp(2 i delta_l) - 1)/2 h_l^(1)(kr) P_l(cos theta)."""
    k = table.k
    r = np.asarray(r, dtype=float)
    c = np.cos(np.asarray(theta, dtype=float))
    out = np.zeros(np.broadcast(r, c).shape, dtype=complex)
    for l, dl in enumerate(table.deltas):
        hl = spherical_jn(l, k * r) + 1j * spherical_yn(l, k * r)
        out = out + (2 * l + 1) * (1j**l) * 0.5 * (np.exp(2j * dl) - 1) * hl * eval_legendre(l, c)
    return out


def lippmann_schwinger_asymptotics_check(potential: Potential, k: float, table=None,
                                         shell=None, n_r: int = 64, n_theta: int = 33,
                                         n_terms: int = 6) -> AsymptoticFit:
    """Fit the reconstructed stationary wave on a far shell to
    exp(ikz) + f(theta) exp(ikr)/r.

    The reported residual is for the leading-order model; ``f_fit`` comes
    from a fit that also carries exp(ikr)/r^m terms up to m = n_terms, so it
    can be compared with the partial-wave f at finite r.
    """
    table = table if table is not None else phase_shifts(potential, k)
    rc = max(potential.r_cut, 1.0)
    lo, hi = shell if shell is not None else (10 * rc, 20 * rc)
    if lo <= potential.r_cut:
        raise GeometryError("fit shell lies inside the potential range")
    r = np.linspace(lo, hi, n_r)
    theta = np.linspace(0.0, np.pi, n_theta)
    R, TH = np.meshgrid(r, theta, indexing="ij")
    psi = np.exp(1j * k * R * np.cos(TH)) + scattered_wave(table, R, TH)
    target = psi - np.exp(1j * k * R * np.cos(TH))
    basis1 = (np.exp(1j * k * r) / r)[:, None]
    f_lead = np.array([np.linalg.lstsq(basis1, target[:, i], rcond=None)[0][0]
                       for i in range(n_theta)])
    resid = target - basis1 * f_lead[None, :]
    residual = float(np.sqrt(np.mean(np.abs(R * resid) ** 2)))
    powers = np.arange(1, n_terms + 1)
    basis = np.exp(1j * k * r)[:, None] * (r[:, None] / lo) ** -powers[None, :] / lo
    f_fit = np.array([np.linalg.lstsq(basis, target[:, i], rcond=None)[0][0]
                      for i in range(n_theta)])
    f_pw = table.amplitude(theta)
    err = float(np.max(np.abs(f_fit - f_pw)))
    return AsymptoticFit((lo, hi), f_fit, f_pw, residual, theta, err)


def born_amplitude(potential: Potential, k: float, theta) -> np.ndarray:
    """First Born approximation f_B = -(2/q) int_0^inf r V(r) sin(q r) dr,
    q = 2k sin(theta/2)."""
    from scipy.integrate import quad

    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if potential.is_zero:
        return np.zeros_like(theta)
    q = 2 * k * np.sin(theta / 2)
    pts = [b for b in potential.breakpoints if 0 < b < potential.r_cut] or None
    out = np.empty_like(theta)
    for i, qi in enumerate(q):
        if qi < 1e-8:
            g = lambda r: r * r * float(potential.radial(np.array([r]))[0])
        else:
            g = lambda r, qi=qi: r * float(potential.radial(np.array([r]))[0]) * np.sin(qi * r) / qi
        out[i] = -2 * quad(g, 0, potential.r_cut, points=pts, limit=200, epsabs=1e-13)[0]
    return out


def born_cross_section(potential: Potential, k: float, theta) -> np.ndarray:
    """dsigma/dOmega in first Born approximation."""
    return born_amplitude(potential, k, theta) ** 2


def cross_section_csv(path, table: PhaseShiftTable, theta, potential: Potential | None = None):
    """dsigma/dOmega on a theta grid (plus the Born curve when a potential is given)."""
    theta = np.asarray(theta, dtype=float)
    dcs = differential_cross_section(table, theta)
    born = born_cross_section(potential, table.k, theta) if potential is not None else None
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "dsigma_domega"] + (["born"] if born is not None else []))
        for i, th in enumerate(theta):
            row = [repr(float(th)), repr(float(dcs[i]))]
            if born is not None:
                row.append(repr(float(born[i])))
            w.writerow(row)


def tables_metadata(tables, path=None) -> dict:
    meta = {"k_grid": [t.k for t in tables], "tables": [t.metadata() for t in tables]}
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
    return meta
