"""Bohmian guidance: current, velocity field, trajectory integration and
sphere-crossing detection.

Trajectories are integrated in batches with an embedded Dormand-Prince
5(4) pair; every row keeps its own time and step size.  Field sources supply
``evaluate(x, t) -> (psi, grad_psi)`` for arrays of points and per-row
times.
"""
from __future__ import annotations

import csv
import logging
from collections import OrderedDict
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import GeometryError, InvalidParameterError, NodeProximityError
from .evolution import EvolutionFrames, spectral_gradient
from .interpolate import cell_coordinates, trilinear_flat
from .wavepacket import GridField

log = logging.getLogger(__name__)

NODE_FLOOR = 1e-12
DEFAULT_RTOL = 1e-8
DEFAULT_ATOL = 1e-8
CROSSING_RTOL = 1e-6

OUTWARD, INWARD = 1, -1


# ---------------------------------------------------------------------------
# field sources


class AnalyticSource:
    """Wraps an analytic wave (packet, superposition, plane wave, ...)."""

    def __init__(self, wave, node_floor: float = NODE_FLOOR):
        self.wave = wave
        self.node_floor = node_floor

    def evaluate(self, x, t):
        return self.wave.evaluate(x, t)

    def intervals(self, t0: float, t1: float):
        return [(t0, t1)]

    def rho_floor(self, t):
        peak = getattr(self.wave, "peak_density", None)
        if peak is None:
            return 0.0
        return self.node_floor * peak(t)

    def peak_density(self, t):
        peak = getattr(self.wave, "peak_density", None)
        return 1.0 if peak is None else peak(t)


class GridSource:
    """Static grid field: trilinear interpolation of psi and its spectral
    gradient.  Time arguments are ignored."""

    def __init__(self, psi: GridField, node_floor: float = NODE_FLOOR):
        self.field = psi
        grad = spectral_gradient(psi)
        self._table = np.stack([psi.values, grad[0], grad[1], grad[2]], axis=-1).reshape(-1, 4)
        self._peak = float(psi.density().max())
        self.node_floor = node_floor

    def evaluate(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 3)
        i0, frac = cell_coordinates(self.field.origin, self.field.spacing, self.field.dims, pts)
        out = trilinear_flat(self._table, self.field.dims, i0, frac)
        return out[:, 0].reshape(x.shape[:-1]), out[:, 1:].reshape(x.shape)

    def intervals(self, t0, t1):
        return [(t0, t1)]

    def rho_floor(self, t):
        return self.node_floor * self._peak

    def peak_density(self, t):
        return self._peak


class FrameSource:
    """Velocity field from stored split-step frames.

    Space: trilinear interpolation.  Time: cubic Hermite using d(psi)/dt =
    -i H psi evaluated spectrally at each frame.  Interpolation acts on the
    carrier-demodulated field phi = psi * exp(-i (k0.x - |k0|^2 t/2)), which is
    smooth on the scale of the packet envelope for a packet of mean momentum
    k0; the transformation is exact, so v = k0 + Im(grad phi / phi).
    """

    def __init__(self, frames: EvolutionFrames, carrier=None, node_floor: float = NODE_FLOOR,
                 cache_size: int = 2):
        if len(frames) < 2:
            raise InvalidParameterError("frame source needs at least two frames")
        self.frames = frames
        self.geom = frames.geometry
        self.times = frames.times
        k0 = frames.carrier if carrier is None else carrier
        self.k0 = np.zeros(3) if k0 is None else np.asarray(k0, dtype=float)
        self.omega = 0.5 * float(self.k0 @ self.k0)
        pot = frames.potential
        self._v_grid = None if pot.is_zero else pot.on_grid(self.geom)
        self._peaks = np.array([f.density().max() for f in frames.fields])
        self.node_floor = node_floor
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()
        self._cache_size = cache_size
        self._carrier_x = None
        self._current = None

    # per-frame table: phi, grad phi (3), dphi/dt, d grad phi/dt (3)
    def _frame_table(self, k: int) -> np.ndarray:
        if k in self._cache:
            self._cache.move_to_end(k)
            return self._cache[k]
        f = self.frames[k]
        t = self.times[k]
        psi = f.values
        kx, ky, kz = f.wavenumbers()
        kvec = (kx[:, None, None], ky[None, :, None], kz[None, None, :])
        if self._carrier_x is None:
            x, y, z = f.mesh()
            self._carrier_x = np.exp(-1j * (self.k0[0] * x + self.k0[1] * y + self.k0[2] * z))
            self._k2 = kvec[0] ** 2 + kvec[1] ** 2 + kvec[2] ** 2
        c = self._carrier_x * np.exp(1j * self.omega * t)
        # one forward transform of psi (and of V psi) serves every component
        ph = np.fft.fftn(psi)
        hph = 0.5 * self._k2 * ph
        if self._v_grid is not None:
            hph += np.fft.fftn(self._v_grid * psi)
        pth = -1j * hph  # transform of d psi / dt = -i H psi
        psi_t = np.fft.ifftn(pth)
        table = np.empty(self.geom.dims + (8,), dtype=complex)
        table[..., 0] = psi * c
        table[..., 4] = (psi_t + 1j * self.omega * psi) * c
        for a in range(3):
            gphi = np.fft.ifftn(1j * kvec[a] * ph) - 1j * self.k0[a] * psi
            gphi_t = np.fft.ifftn(1j * kvec[a] * pth) - 1j * self.k0[a] * psi_t
            table[..., 1 + a] = gphi * c
            table[..., 5 + a] = (gphi_t + 1j * self.omega * gphi) * c
        table = table.reshape(-1, 8)
        self._cache[k] = table
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return table

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise GeometryError("time outside the stored frames")
        ks = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        if self._current is not None:
            k = self._current
            inside = (t >= self.times[k] - 1e-12) & (t <= self.times[k + 1] + 1e-12)
            ks = np.where(inside, k, ks)
        return ks

    def _eval_interval(self, k, pts, t):
        t0, t1 = self.times[k], self.times[k + 1]
        dt = t1 - t0
        a, b = self._frame_table(k), self._frame_table(k + 1)
        i0, frac = cell_coordinates(self.geom.origin, self.geom.spacing, self.geom.dims, pts)
        va = trilinear_flat(a, self.geom.dims, i0, frac)
        vb = trilinear_flat(b, self.geom.dims, i0, frac)
        s = ((t - t0) / dt)[:, None]
        s2, s3 = s * s, s * s * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        phi4 = h00 * va[:, 0:4] + h10 * dt * va[:, 4:8] + h01 * vb[:, 0:4] + h11 * dt * vb[:, 4:8]
        phi, gphi = phi4[:, 0], phi4[:, 1:4]
        cinv = np.exp(1j * (pts @ self.k0 - self.omega * t))
        psi = phi * cinv
        grad = (gphi + 1j * self.k0 * phi[:, None]) * cinv[:, None]
        return psi, grad

    def evaluate(self, x, t):
        x = np.asarray(x, dtype=float)
        pts = x.reshape(-1, 3)
        tt = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1]).reshape(-1)
        ks = self._locate(tt)
        psi = np.empty(len(pts), dtype=complex)
        grad = np.empty((len(pts), 3), dtype=complex)
        for k in np.unique(ks):
            m = ks == k
            psi[m], grad[m] = self._eval_interval(int(k), pts[m], tt[m])
        return psi.reshape(x.shape[:-1]), grad.reshape(x.shape)

    def intervals(self, t0, t1):
        if t0 < self.times[0] - 1e-12 or t1 > self.times[-1] + 1e-12:
            raise GeometryError("requested time span not covered by frames")
        inner = self.times[(self.times > t0) & (self.times < t1)]
        edges = np.concatenate([[t0], inner, [t1]])
        return list(zip(edges[:-1], edges[1:]))

    def prepare(self, ta, tb):
        self._current = None
        k = int(self._locate(np.array([0.5 * (ta + tb)]))[0])
        self._current = k
        self._frame_table(k)
        self._frame_table(k + 1)

    def rho_floor(self, t):
        ks = self._locate(t)
        return self.node_floor * np.maximum(self._peaks[ks], self._peaks[ks + 1])

    def peak_density(self, t):
        ks = self._locate(t)
        return np.maximum(self._peaks[ks], self._peaks[ks + 1])


def as_source(obj):
    if hasattr(obj, "intervals"):
        return obj
    if isinstance(obj, EvolutionFrames):
        return FrameSource(obj)
    if isinstance(obj, GridField):
        return GridSource(obj)
    return AnalyticSource(obj)


# ---------------------------------------------------------------------------
# flux and velocity


def current(psi, x, t=0.0) -> np.ndarray:
    """Probability current j = Im(psi* grad psi)."""
    src = as_source(psi)
    p, g = src.evaluate(np.asarray(x, dtype=float), t)
    return np.imag(np.conj(p)[..., None] * g)


def velocity(psi, x, t=0.0, rho_floor: float | None = None) -> np.ndarray:
    """Bohmian velocity v = j / rho = Im(grad psi / psi).

    Raises NodeProximityError where rho <= rho_floor (default: 1e-12 of the
    peak density).
    """
    src = as_source(psi)
    x = np.asarray(x, dtype=float)
    p, g = src.evaluate(x, t)
    rho = np.abs(p) ** 2
    floor = src.rho_floor(t) if rho_floor is None else rho_floor
    if np.any(rho <= floor):
        raise NodeProximityError("density below node floor")
    return np.imag(g / p[..., None])


# ---------------------------------------------------------------------------
# trajectories


class Status(Enum):
    EXITED = "exited"
    ALIVE = "alive_at_Tmax"
    ABORTED_NODE = "aborted_near_node"
    ABORTED_STEP = "aborted_step_underflow"


@dataclass(frozen=True)
class CrossingEvent:
    t: float
    x: np.ndarray
    sign: int  # OUTWARD or INWARD
    radius: float


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    status: Status
    x0: np.ndarray
    exit_time: float | None = None
    exit_position: np.ndarray | None = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "y", "z"])
            for t, p in zip(self.times, self.positions):
                w.writerow([repr(float(t)), *(repr(float(c)) for c in p)])


def crossings_to_csv(events, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "z", "sign", "R"])
        for e in events:
            w.writerow([repr(float(e.t)), *(repr(float(c)) for c in e.x),
                        int(e.sign), repr(float(e.radius))])


def count_crossings(events):
    """(N, N+, N-, Ns) for the events of one trajectory on one sphere."""
    n_out = sum(1 for e in events if e.sign == OUTWARD)
    n_in = sum(1 for e in events if e.sign == INWARD)
    return n_out + n_in, n_out, n_in, n_out - n_in


# Dormand-Prince 5(4) tableau with 4th-order dense output
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _dense(y, h, K, theta):
    """Dense-output position at fractional step ``theta`` (rows aligned)."""
    powers = theta[:, None] ** np.arange(1, 5)[None, :]
    coef = powers @ _P.T  # (n, 7)
    return y + h[:, None] * np.einsum("ns,nsd->nd", coef, K)


@dataclass
class EnsembleTrajectories:
    """Raw batch-integration output."""

    x0: np.ndarray
    t0: float
    t1: float
    radii: np.ndarray
    final_positions: np.ndarray
    final_times: np.ndarray
    status: np.ndarray  # 0 alive, 1 node abort, 2 step underflow
    exit_times: np.ndarray  # (n, n_radii), nan where never exited
    exit_positions: np.ndarray  # (n, n_radii, 3)
    started_outside: np.ndarray  # (n, n_radii) bool
    event_row: np.ndarray
    event_radius: np.ndarray
    event_t: np.ndarray
    event_x: np.ndarray
    event_sign: np.ndarray
    paths: list | None = None
    n_steps: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.x0)

    def events_for(self, row: int, radius_index: int = 0) -> list[CrossingEvent]:
        m = (self.event_row == row) & (self.event_radius == radius_index)
        order = np.argsort(self.event_t[m])
        R = float(self.radii[radius_index])
        return [CrossingEvent(float(t), x.copy(), int(s), R)
                for t, x, s in zip(self.event_t[m][order], self.event_x[m][order],
                                   self.event_sign[m][order])]


def integrate_ensemble(x0, source, t_span, radii=(), *, rtol: float = DEFAULT_RTOL,
                       atol: float = DEFAULT_ATOL, record_paths: bool = False,
                       max_steps: int = 200_000, h_min_rel: float = 1e-13) -> EnsembleTrajectories:
    """Integrate dx/dt = v(psi_t, x) for every row of ``x0`` over ``t_span``,
    recording all crossings of the spheres |x| = R for R in ``radii``."""
    src = as_source(source)
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = len(x0)
    t0, t1 = map(float, t_span)
    if not t1 > t0:
        raise InvalidParameterError("t_span must be increasing")
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    nr = len(radii)

    X = x0.copy()
    T = np.full(n, t0)
    H = np.full(n, np.nan)
    F = np.full((n, 3), np.nan)
    status = np.zeros(n, dtype=np.int8)
    steps = np.zeros(n, dtype=np.int64)
    r_start = np.linalg.norm(x0, axis=1)
    outside0 = r_start[:, None] >= radii[None, :]
    exit_t = np.where(outside0, t0, np.nan)
    exit_x = np.where(outside0[..., None], x0[:, None, :], np.nan)
    ev_row, ev_rad, ev_t, ev_x, ev_s = [], [], [], [], []
    paths = [[(t0, x0[i].copy())] for i in range(n)] if record_paths else None

    def rhs(y, t):
        # rows near a node overflow here; they are flagged and aborted below
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            p, g = src.evaluate(y, t)
            rho = (p.real ** 2 + p.imag ** 2)
            v = np.imag(g / p[:, None])
        bad = ~(rho > src.rho_floor(t)) | ~np.all(np.isfinite(v), axis=1)
        return v, bad

    for ta, tb in src.intervals(t0, t1):
        if hasattr(src, "prepare"):
            src.prepare(ta, tb)
        live = status == 0
        need = live & np.isnan(F[:, 0])
        if need.any():
            idx = np.nonzero(need)[0]
            v, bad = rhs(X[idx], T[idx])
            F[idx] = v
            status[idx[bad]] = 1
            speed = np.linalg.norm(v, axis=1)
            guess = 0.01 * np.maximum(1.0, np.linalg.norm(X[idx], axis=1)) / np.maximum(speed, 1e-8)
            H[idx] = np.where(np.isnan(H[idx]), guess, H[idx])
        active = (status == 0) & (T < tb)
        while active.any():
            idx = np.nonzero(active)[0]
            y = X[idx]
            t = T[idx]
            h = np.minimum(H[idx], tb - t)
            K = np.empty((len(idx), 7, 3))
            K[:, 0] = F[idx]
            stage_bad = np.zeros(len(idx), dtype=bool)
            for s in range(1, 6):
                dy = np.einsum("j,njd->nd", np.asarray(_A[s]), K[:, :s])
                K[:, s], bad = rhs(y + h[:, None] * dy, t + _C[s] * h)
                stage_bad |= bad
            y_new = y + h[:, None] * np.einsum("j,njd->nd", _B, K[:, :6])
            K[:, 6], bad = rhs(y_new, t + h)
            stage_bad |= bad
            err = h[:, None] * np.einsum("j,njd->nd", _E, K)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err_norm = np.sqrt(np.mean((err / scale) ** 2, axis=1))
            err_norm = np.where(stage_bad, np.inf, err_norm)
            ok = err_norm <= 1.0

            # crossings on accepted steps
            acc = np.nonzero(ok)[0]
            if nr and len(acc):
                ra = np.linalg.norm(y[acc], axis=1)
                rb = np.linalg.norm(y_new[acc], axis=1)
                for ir, R in enumerate(radii):
                    cross = (ra < R) != (rb < R)
                    if not cross.any():
                        continue
                    loc = acc[cross]
                    inside_first = ra[cross] < R
                    lo = np.zeros(len(loc))
                    hi = np.ones(len(loc))
                    for _ in range(48):
                        mid = 0.5 * (lo + hi)
                        rm = np.linalg.norm(_dense(y[loc], h[loc], K[loc], mid), axis=1)
                        beyond = (rm >= R) == inside_first
                        hi = np.where(beyond, mid, hi)
                        lo = np.where(beyond, lo, mid)
                    theta = 0.5 * (lo + hi)
                    xc = _dense(y[loc], h[loc], K[loc], theta)
                    tc = t[loc] + theta * h[loc]
                    vc, _ = rhs(xc, tc)
                    vr = np.sum(vc * xc, axis=1)
                    sign = np.sign(vr).astype(int)
                    keep = sign != 0
                    rows = idx[loc]
                    ev_row.append(rows[keep])
                    ev_rad.append(np.full(keep.sum(), ir))
                    ev_t.append(tc[keep])
                    ev_x.append(xc[keep])
                    ev_s.append(sign[keep])
                    first = keep & (sign == OUTWARD) & np.isnan(exit_t[rows, ir])
                    exit_t[rows[first], ir] = tc[first]
                    exit_x[rows[first], ir] = xc[first]

            gi = idx[ok]
            X[gi] = y_new[ok]
            T[gi] = np.where(tb - (t[ok] + h[ok]) <= 1e-14 * max(1.0, abs(tb)), tb, t[ok] + h[ok])
            F[gi] = K[ok, 6]
            steps[gi] += 1
            if record_paths:
                for i, tt, yy in zip(gi, T[gi], X[gi]):
                    paths[i].append((float(tt), yy.copy()))

            with np.errstate(divide="ignore"):
                fac = np.where(err_norm == 0, 5.0, 0.9 * err_norm ** -0.2)
            fac = np.clip(np.nan_to_num(fac, nan=0.2, posinf=5.0), 0.2, 5.0)
            fac = np.where(stage_bad, 0.25, fac)
            fac = np.where(ok, fac, np.minimum(fac, 1.0))
            # a step shortened to hit the interval end does not shrink the next one
            clipped = H[idx] > h
            H[idx] = np.where(ok & clipped, np.maximum(H[idx], h * fac), h * fac)

            tiny = H[idx] < h_min_rel * np.maximum(1.0, np.abs(t))
            status[idx[tiny & stage_bad]] = 1
            status[idx[tiny & ~stage_bad]] = 2
            if np.any(steps[idx] > max_steps):
                status[idx[steps[idx] > max_steps]] = 2
            active = (status == 0) & (T < tb)

    def cat(parts, shape, dtype):
        return np.concatenate(parts) if parts else np.zeros(shape, dtype=dtype)

    return EnsembleTrajectories(
        x0=x0, t0=t0, t1=t1, radii=radii, final_positions=X, final_times=T,
        status=status, exit_times=exit_t, exit_positions=exit_x, started_outside=outside0,
        event_row=cat(ev_row, (0,), int), event_radius=cat(ev_rad, (0,), int),
        event_t=cat(ev_t, (0,), float), event_x=cat(ev_x, (0, 3), float),
        event_sign=cat(ev_s, (0,), int),
        paths=[(np.array([p[0] for p in q]), np.array([p[1] for p in q])) for q in paths]
        if record_paths else None,
        n_steps=steps,
    )


def integrate_trajectory(x0, source, t_span, R_exit: float | None = None, **options):
    """Single trajectory plus its crossing events of |x| = R_exit."""
    radii = () if R_exit is None else (R_exit,)
    res = integrate_ensemble(np.asarray(x0, dtype=float)[None], source, t_span, radii,
                             record_paths=True, **options)
    times, positions = res.paths[0]
    code = int(res.status[0])
    exit_time = exit_pos = None
    if code == 1:
        status = Status.ABORTED_NODE
    elif code == 2:
        status = Status.ABORTED_STEP
    else:
        status = Status.ALIVE
    if R_exit is not None and np.isfinite(res.exit_times[0, 0]):
        exit_time = float(res.exit_times[0, 0])
        exit_pos = res.exit_positions[0, 0].copy()
        if code == 0:
            status = Status.EXITED
    traj = Trajectory(times, positions, status, np.asarray(x0, dtype=float),
                      exit_time, exit_pos)
    events = res.events_for(0, 0) if R_exit is not None else []
    return traj, events
