"""Ensemble execution and the statistical estimators built on first exits
and sphere crossings: cross-section measure, crossing expectations, the
exit joint law and the interacting-run consistency check."""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, InvalidParameterError
from .evolution import (EvolutionFrames, NoPotential, Potential, boundary_mass,
                        split_step_evolve)
from .guidance import AnalyticSource, EnsembleTrajectories, FrameSource, integrate_ensemble
from .sampling import sample_positions, speed_quantile
from .surfaces import (ConeBin, FluxTable, SphereSpec, assign_bins, flux_table,
                       momentum_probabilities, polar_partition)
from .wavepacket import GaussianPacket, grid_geometry, sample_to_grid

Z_LIMIT = 3.0
PASS_FRACTION = 0.95
ABORT_FLAG = 1e-3
POSITIVITY_TOL = 1e-3


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class GridSpec:
    """Box, spacing and time stepping for split-step runs."""

    lo: tuple
    hi: tuple
    spacing: float
    dt: float
    stride: int  # split steps per stored frame
    t_max: float

    def to_dict(self):
        return {"lo": list(map(float, self.lo)), "hi": list(map(float, self.hi)),
                "spacing": self.spacing, "dt": self.dt, "stride": self.stride, "t_max": self.t_max}


def default_partition() -> list[ConeBin]:
    """32 bins: polar rings at 0, 4, 8, 14, 180 degrees times 8 azimuthal sectors."""
    return polar_partition(np.radians([0.0, 4.0, 8.0, 14.0, 180.0]), 8)


@dataclass
class ScatteringScenario:
    packet: object  # GaussianPacket or Superposition
    potential: Potential = field(default_factory=NoPotential)
    radii: tuple = (40.0, 80.0, 160.0)
    bins: list = field(default_factory=default_partition)
    t_max: float | None = None
    n_traj: int = 10_000
    seed: int = 0
    grid: GridSpec | None = None
    name: str = ""

    def __post_init__(self):
        self.radii = tuple(float(r) for r in self.radii)
        if not self.radii or min(self.radii) <= 0:
            raise InvalidParameterError("at least one positive sphere radius required")
        if self.n_traj < 1:
            raise InvalidParameterError("n_traj must be positive")
        if not self.potential.is_zero:
            if self.grid is None:
                raise InvalidParameterError("an interacting scenario needs a grid")
            for p in getattr(self.packet, "packets", (self.packet,)):
                dist = float(np.linalg.norm(p.center))
                need = 6 * p.sigma + self.potential.r_cut
                if dist <= need:
                    raise InvalidParameterError(
                        f"packet not far-prepared: |c| = {dist:.3g} <= 6 sigma + r_cut = {need:.3g}")
                if min(self.radii) < dist + 4 * p.sigma:
                    raise GeometryError(
                        f"sphere R = {min(self.radii):.3g} does not enclose the initial packet "
                        f"(needs >= |c| + 4 sigma = {dist + 4 * p.sigma:.3g})")
            if max(self.radii) <= self.potential.r_cut:
                raise GeometryError("spheres must lie outside the potential range")

    @property
    def interacting(self) -> bool:
        return not self.potential.is_zero

    def horizon(self) -> float:
        """Integration end time: explicit t_max, the grid window, or 4 R/v_min."""
        if self.t_max is not None:
            return float(self.t_max)
        if self.grid is not None:
            return float(self.grid.t_max)
        return 4.0 * max(self.radii) / speed_quantile(self.packet, 1e-3)

    def to_dict(self) -> dict:
        packets = [{"center": p.center.tolist(), "k0": p.k0.tolist(), "sigma": p.sigma,
                    "amplitude": [float(np.real(p.amplitude)), float(np.imag(p.amplitude))]}
                   for p in getattr(self.packet, "packets", (self.packet,))]
        return {
            "name": self.name, "packets": packets, "potential": self.potential.spec(),
            "radii": list(self.radii), "bins": [_bin_dict(b) for b in self.bins],
            "t_max": self.t_max, "n_traj": self.n_traj, "seed": self.seed,
            "grid": None if self.grid is None else self.grid.to_dict(),
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _bin_dict(b: ConeBin) -> dict:
    return {"label": b.label, "axis": list(map(float, b.axis)), "theta": [b.theta_lo, b.theta_hi],
            "phi": [b.phi_lo, b.phi_hi]}


# ---------------------------------------------------------------------------
# ensemble results


def freedman_diaconis_edges(samples, lo=None, hi=None, max_bins: int = 200) -> np.ndarray:
    """Histogram edges with Freedman-Diaconis width, optionally padded to [lo, hi]."""
    s = np.asarray(samples, dtype=float)
    s = s[np.isfinite(s)]
    if len(s) < 2 or np.ptp(s) == 0:
        edges = np.array([s.min(), s.min() + 1.0]) if len(s) else np.array([0.0, 1.0])
    else:
        iqr = np.subtract(*np.percentile(s, [75, 25]))
        width = 2 * iqr / len(s) ** (1 / 3) if iqr > 0 else np.ptp(s) / 10
        nb = int(np.clip(np.ceil(np.ptp(s) / width), 1, max_bins))
        edges = np.linspace(s.min(), s.max(), nb + 1)
    if lo is not None and lo < edges[0]:
        edges = np.concatenate([[lo], edges])
    if hi is not None and hi > edges[-1]:
        edges = np.concatenate([edges, [hi]])
    return edges


def binomial_z(observed, predicted, n):
    """z = (observed - predicted) / sqrt(predicted (1 - predicted) / n), with the
    predicted probability setting the standard error; a zero error with zero
    discrepancy gives z = 0."""
    obs = np.asarray(observed, dtype=float)
    p = np.clip(np.asarray(predicted, dtype=float), 0.0, 1.0)
    se = np.sqrt(p * (1 - p) / n)
    diff = obs - p
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(diff == 0, 0.0, diff / se)
    return z, se


@dataclass
class EnsembleResult:
    radius: float
    n_traj: int
    seed: int
    bins: list
    t_span: tuple
    exits: np.ndarray  # first exits per bin
    still_inside: int
    aborts: int
    exit_times: np.ndarray  # per trajectory, nan if no exit
    exit_bin: np.ndarray  # per trajectory, -1 if no exit
    time_edges: np.ndarray
    time_counts: np.ndarray
    n_abs: np.ndarray  # (n_traj, n_bins) crossing counts
    n_plus: np.ndarray
    n_minus: np.ndarray

    @property
    def sigma_hat(self) -> np.ndarray:
        return self.exits / self.n_traj

    @property
    def sigma_se(self) -> np.ndarray:
        p = self.sigma_hat
        return np.sqrt(p * (1 - p) / self.n_traj)

    @property
    def abort_fraction(self) -> float:
        return self.aborts / self.n_traj

    @property
    def flagged(self) -> bool:
        return self.abort_fraction > ABORT_FLAG

    def _mean_se(self, per_traj):
        m = per_traj.mean(axis=0)
        se = per_traj.std(axis=0, ddof=1) / np.sqrt(self.n_traj) if self.n_traj > 1 else 0 * m
        return m, se

    def crossing_means(self):
        """Per-bin E(N), E(N_s) and their sample standard errors."""
        mN, sN = self._mean_se(self.n_abs)
        mS, sS = self._mean_se(self.n_plus - self.n_minus)
        return mN, sN, mS, sS

    def totals(self) -> dict:
        out = {}
        for key, arr in (("N", self.n_abs), ("N_plus", self.n_plus), ("N_minus", self.n_minus),
                         ("N_s", self.n_plus - self.n_minus)):
            per = arr.sum(axis=1)
            se = float(per.std(ddof=1) / np.sqrt(self.n_traj)) if self.n_traj > 1 else 0.0
            out[key] = {"mean": float(per.mean()), "se": se}
        return out

    def minus_fraction(self) -> float:
        total = self.n_abs.sum()
        return float(self.n_minus.sum() / total) if total else 0.0

    def summary(self) -> dict:
        return {
            "R": self.radius, "n_traj": self.n_traj, "seed": self.seed,
            "t_span": list(self.t_span), "exits_total": int(self.exits.sum()),
            "still_inside": self.still_inside, "aborts": self.aborts,
            "abort_flagged": self.flagged, "totals": self.totals(),
            "minus_fraction": self.minus_fraction(),
            "exit_time_histogram": {"edges": self.time_edges.tolist(),
                                    "counts": self.time_counts.tolist()},
        }


def summarize(traj: EnsembleTrajectories, radius_index: int, bins, seed: int,
              time_edges=None) -> EnsembleResult:
    """Bin the first exits and crossings of one sphere from a batch run."""
    n = traj.n
    nb = len(bins)
    ri = radius_index
    R = float(traj.radii[ri])
    et = traj.exit_times[:, ri].copy()
    exited = np.isfinite(et)
    ebin = np.full(n, -1)
    if exited.any():
        ebin[exited] = assign_bins(bins, traj.exit_positions[exited, ri])
    exits = np.bincount(ebin[exited & (ebin >= 0)], minlength=nb)
    aborted = (traj.status != 0) & ~exited
    still = (~exited) & (traj.status == 0)

    m = traj.event_radius == ri
    rows = traj.event_row[m]
    sgn = traj.event_sign[m]
    eb = assign_bins(bins, traj.event_x[m]) if m.any() else np.zeros(0, dtype=int)
    ok = eb >= 0
    flat = rows[ok] * nb + eb[ok]
    plus = np.bincount(flat[sgn[ok] > 0], minlength=n * nb).reshape(n, nb)
    minus = np.bincount(flat[sgn[ok] < 0], minlength=n * nb).reshape(n, nb)

    if time_edges is None:
        time_edges = freedman_diaconis_edges(et[exited])
    counts = np.histogram(et[exited], bins=time_edges)[0]
    return EnsembleResult(
        radius=R, n_traj=n, seed=int(seed), bins=list(bins), t_span=(traj.t0, traj.t1),
        exits=exits, still_inside=int(still.sum()), aborts=int(aborted.sum()),
        exit_times=et, exit_bin=ebin, time_edges=np.asarray(time_edges), time_counts=counts,
        n_abs=plus + minus, n_plus=plus, n_minus=minus,
    )


def _merge(parts: list[EnsembleTrajectories]) -> EnsembleTrajectories:
    if len(parts) == 1:
        return parts[0]
    offsets = np.cumsum([0] + [p.n for p in parts[:-1]])
    cat = np.concatenate
    return EnsembleTrajectories(
        x0=cat([p.x0 for p in parts]), t0=parts[0].t0, t1=parts[0].t1, radii=parts[0].radii,
        final_positions=cat([p.final_positions for p in parts]),
        final_times=cat([p.final_times for p in parts]),
        status=cat([p.status for p in parts]),
        exit_times=cat([p.exit_times for p in parts]),
        exit_positions=cat([p.exit_positions for p in parts]),
        started_outside=cat([p.started_outside for p in parts]),
        event_row=cat([p.event_row + o for p, o in zip(parts, offsets)]),
        event_radius=cat([p.event_radius for p in parts]),
        event_t=cat([p.event_t for p in parts]),
        event_x=cat([p.event_x for p in parts]),
        event_sign=cat([p.event_sign for p in parts]),
        n_steps=cat([p.n_steps for p in parts]),
    )


def integrate_parallel(x0, source, t_span, radii, threads: int = 1, chunk: int = 2500,
                       **options) -> EnsembleTrajectories:
    """Chunked ensemble integration.  Rows are integrated independently, so
    the result does not depend on the chunking or the thread count.  Frame
    sources keep a frame cache and always run serially."""
    x0 = np.atleast_2d(x0)
    pieces = [x0[i:i + chunk] for i in range(0, len(x0), chunk)]
    run = lambda xs: integrate_ensemble(xs, source, t_span, radii, **options)  # noqa: E731
    if threads > 1 and not isinstance(source, FrameSource) and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, pieces))
    else:
        parts = [run(xs) for xs in pieces]
    return _merge(parts)


def build_frames(scenario: ScatteringScenario, potential: Potential | None = None) -> EvolutionFrames:
    """Split-step frames on the scenario grid (``potential`` overrides the
    scenario's, e.g. for the paired V = 0 reference run)."""
    g = scenario.grid
    if g is None:
        raise InvalidParameterError("scenario has no grid")
    origin, dims = grid_geometry(g.lo, g.hi, g.spacing)
    psi0 = sample_to_grid(scenario.packet, origin, g.spacing, dims)
    n_steps = int(round(g.t_max / g.dt))
    pot = scenario.potential if potential is None else potential
    frames = split_step_evolve(psi0, pot, g.dt, n_steps, stride=g.stride)
    frames.carrier = np.asarray(getattr(scenario.packet, "k0", np.zeros(3)), dtype=float)
    return frames


def scenario_source(scenario: ScatteringScenario, frames: EvolutionFrames | None = None):
    if not scenario.interacting and frames is None:
        return AnalyticSource(scenario.packet)
    if frames is None:
        frames = build_frames(scenario)
    return FrameSource(frames)


def run_ensemble(scenario: ScatteringScenario, *, source=None, seed: int | None = None,
                 threads: int = 1, time_edges=None, **options) -> dict[float, EnsembleResult]:
    """Sample |psi_0|^2, integrate the guidance law to the horizon and summarize
    first exits and crossings for every radius of the sweep."""
    seed = scenario.seed if seed is None else seed
    src = source if source is not None else scenario_source(scenario)
    t1 = scenario.horizon()
    x0 = sample_positions(scenario.packet, scenario.n_traj, seed)
    traj = integrate_parallel(x0, src, (0.0, t1), scenario.radii, threads=threads, **options)
    return {R: summarize(traj, i, scenario.bins, seed, time_edges)
            for i, R in enumerate(scenario.radii)}


# ---------------------------------------------------------------------------
# checks


def _pass_fraction(z) -> float:
    z = np.asarray(z)
    return float(np.mean(np.abs(z) <= Z_LIMIT)) if z.size else 1.0


def _check_same_geometry(result: EnsembleResult, table: FluxTable):
    if abs(table.radius - result.radius) > 1e-12 * max(1.0, result.radius):
        raise GeometryError("flux table and ensemble use different spheres")
    if len(table.bins) != len(result.bins):
        raise GeometryError("flux table and ensemble use different bin partitions")
    lo, hi = table.time_edges[0], table.time_edges[-1]
    if abs(lo - result.t_span[0]) > 1e-9 or abs(hi - result.t_span[1]) > 1e-9:
        raise GeometryError("flux table and ensemble cover different time windows")


def cross_section_check(result: EnsembleResult, table: FluxTable, momentum=None) -> dict:
    """Per-bin exit fraction vs time-integrated signed flux (and the
    momentum-space prediction when given), binomial z-scores."""
    _check_same_geometry(result, table)
    n = result.n_traj
    flux = table.signed_total
    z_flux, se_flux = binomial_z(result.sigma_hat, flux, n)
    out = {
        "R": result.radius,
        "bins": [],
        "pass_fraction_flux": _pass_fraction(z_flux),
    }
    z_mom = None
    if momentum is not None:
        z_mom, _ = binomial_z(result.sigma_hat, momentum, n)
        out["pass_fraction_momentum"] = _pass_fraction(z_mom)
    for i, b in enumerate(result.bins):
        row = {"bin": b.label or str(i), "exits": int(result.exits[i]),
               "sigma_hat": float(result.sigma_hat[i]), "se": float(se_flux[i]),
               "signed_flux": float(flux[i]), "abs_flux": float(table.absolute_total[i]),
               "z": float(z_flux[i])}
        if momentum is not None:
            row["momentum_prediction"] = float(momentum[i])
            row["z_momentum"] = float(z_mom[i])
        out["bins"].append(row)
    ok = out["pass_fraction_flux"] >= PASS_FRACTION
    if momentum is not None:
        ok = ok and out["pass_fraction_momentum"] >= PASS_FRACTION
    out["pass"] = bool(ok)
    return out


def crossing_expectation_check(result: EnsembleResult, table: FluxTable) -> dict:
    """E(N) per bin vs the integral of |j.n|, E(N_s) vs the integral of j.n.

    The standard error is the larger of the sample error and the binomial
    error of the prediction, so bins that no trajectory reaches are still
    compared on a meaningful scale."""
    _check_same_geometry(result, table)
    n = result.n_traj
    mN, sN, mS, sS = result.crossing_means()
    a, s = table.absolute_total, table.signed_total
    floor_a = np.sqrt(np.clip(a, 0, 1) * (1 - np.clip(a, 0, 1)) / n)
    floor_s = np.sqrt(np.clip(np.abs(s), 0, 1) * (1 - np.clip(np.abs(s), 0, 1)) / n)
    se_a = np.maximum(sN, floor_a)
    se_s = np.maximum(sS, floor_s)
    with np.errstate(divide="ignore", invalid="ignore"):
        zN = np.where(mN == a, 0.0, (mN - a) / se_a)
        zS = np.where(mS == s, 0.0, (mS - s) / se_s)
    totals = result.totals()
    out = {
        "R": result.radius,
        "z_N": zN.tolist(), "z_Ns": zS.tolist(),
        "pass_fraction_N": _pass_fraction(zN), "pass_fraction_Ns": _pass_fraction(zS),
        "totals": totals,
        "flux_abs_total": float(a.sum()), "flux_signed_total": float(s.sum()),
        "minus_fraction": result.minus_fraction(),
        "flux_inward_fraction": table.inward_fraction(),
    }
    out["pass"] = bool(out["pass_fraction_N"] >= PASS_FRACTION
                       and out["pass_fraction_Ns"] >= PASS_FRACTION)
    return out


def positivity_fraction(table: FluxTable) -> float:
    """Inward flux relative to outward flux over the whole table; zero when
    j.n >= 0 everywhere on the sphere and window."""
    return table.inward_fraction()


def exit_law_check(result: EnsembleResult, source, sphere: SphereSpec | None = None,
                   time_edges=None, tolerance: float = POSITIVITY_TOL) -> dict:
    """Joint (direction bin, exit time) histogram vs the flux measure j.n dS dt.

    Runs only when the current is outward on the sphere for the whole
    window; otherwise the law is not claimed and the measured inward-flux
    fraction is reported instead."""
    sphere = sphere or SphereSpec(result.radius, 48, 16)
    if abs(sphere.radius - result.radius) > 1e-12 * max(1.0, result.radius):
        raise GeometryError("sphere does not match the ensemble radius")
    t0, t1 = result.t_span
    if time_edges is None:
        time_edges = freedman_diaconis_edges(result.exit_times, t0, t1, max_bins=40)
    time_edges = np.asarray(time_edges, dtype=float)
    table = flux_table(source, sphere, result.bins, time_edges, rel_tol=1e-6, abs_tol=1e-9)
    neg = positivity_fraction(table)
    base = {"R": result.radius, "negative_flux_fraction": neg, "tolerance": tolerance}
    if neg > tolerance:
        return {**base, "status": "inapplicable", "pass": None}
    n = result.n_traj
    exited = result.exit_bin >= 0
    hist = np.zeros_like(table.signed)
    ti = np.clip(np.searchsorted(time_edges, result.exit_times[exited], side="right") - 1,
                 0, len(time_edges) - 2)
    np.add.at(hist, (result.exit_bin[exited], ti), 1)
    pred = table.signed
    z, _ = binomial_z(hist / n, pred, n)
    populated = (pred * n >= 1.0) | (hist > 0)
    frac = _pass_fraction(z[populated])
    return {
        **base, "status": "applicable",
        "n_cells": int(z.size), "populated_cells": int(populated.sum()),
        "pass_fraction": frac, "max_abs_z": float(np.max(np.abs(z[populated]))) if populated.any() else 0.0,
        "flux_total": float(pred.sum()), "escape_fraction": float(exited.mean()),
        "time_edges": time_edges.tolist(),
        "pass": bool(frac >= PASS_FRACTION),
    }


# ---------------------------------------------------------------------------
# interacting runs


def s_matrix_prediction(packet: GaussianPacket, potential: Potential, bins, n_k: int = 40,
                        n_mu: int = 256, n_phi: int = 64) -> np.ndarray:
    """Outgoing-momentum probabilities per bin, |S psi_hat|^2 integrated over
    each bin, for a packet whose mean momentum and centre lie on one axis.

    For such a packet psi_hat(k) depends on |k| and the polar angle only, so
    S acts on its Legendre coefficients: a_l(k) -> exp(2 i delta_l(k)) a_l(k).
    The far-prepared packet stands in for its own incoming asymptote."""
    from scipy.special import eval_legendre

    from .stationary import phase_shifts

    k0 = np.asarray(packet.k0, dtype=float)
    kk = float(np.linalg.norm(k0))
    axis = k0 / kk
    c = np.asarray(packet.center, dtype=float)
    if np.linalg.norm(np.cross(c, axis)) > 1e-9 * max(1.0, np.linalg.norm(c)):
        raise InvalidParameterError("packet centre and momentum must share one axis")
    for b in bins:
        if np.linalg.norm(np.cross(np.asarray(b.axis, dtype=float), axis)) > 1e-12 and not b.full_azimuth:
            raise InvalidParameterError("bins must be symmetric about the packet axis")
    spread = 1.0 / (2 * packet.sigma)
    k_lo, k_hi = max(kk - 7 * spread, 1e-3), kk + 7 * spread
    xk, wk = np.polynomial.legendre.leggauss(n_k)
    ks = 0.5 * (k_hi - k_lo) * xk + 0.5 * (k_hi + k_lo)
    wk = 0.5 * (k_hi - k_lo) * wk
    mu, wmu = np.polynomial.legendre.leggauss(n_mu)
    dirs = mu[:, None] * axis[None, :] + np.sqrt(1 - mu**2)[:, None] * _perp(axis)[None, :]
    out = np.zeros(len(bins))
    for k, w in zip(ks, wk):
        phi = packet.momentum_amplitude(k * dirs)  # (n_mu,)
        table = phase_shifts(potential, float(k))
        L = table.l_max
        P = np.array([eval_legendre(l, mu) for l in range(L + 1)])  # (L+1, n_mu)
        a = P @ (wmu * phi)
        corr = ((2 * np.arange(L + 1) + 1) / 2 * a * (np.exp(2j * table.deltas) - 1)) @ P
        out_amp = phi + corr
        dens = np.abs(out_amp) ** 2 * k * k * w
        for i, b in enumerate(bins):
            out[i] += _axial_bin_integral(b, axis, mu, wmu, dens)
    return out


def _perp(axis):
    trial = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = trial - (trial @ axis) * axis
    return p / np.linalg.norm(p)


def _axial_bin_integral(b: ConeBin, axis, mu, wmu, dens):
    # azimuthally symmetric density: spline integral over the polar range times the phi range
    from scipy.interpolate import CubicSpline

    order = np.argsort(mu)
    spline = CubicSpline(mu[order], dens[order])
    lo, hi = np.cos(b.theta_hi), np.cos(b.theta_lo)
    if np.allclose(b.axis, -axis):
        lo, hi = -hi, -lo
    return float(spline.integrate(lo, hi) * (b.phi_hi - b.phi_lo))


def norm_drift(frames: EvolutionFrames) -> float:
    n = frames.norms()
    return float(np.max(np.abs(n - n[0])))


def interacting_fast_check(scenario: ScatteringScenario, *, seeds=(1, 2, 3), frames=None,
                           free_frames=None, forward: ConeBin | None = None,
                           with_prediction: bool = True) -> dict:
    """Internal consistency of an interacting split-step run.

    * norm drift over the run;
    * trajectory first exits vs the time-integrated signed flux per bin over
      the same window (binomial z);
    * forward-bin deficit relative to a V = 0 run on the same grid with the
      same initial positions, for several seeds;
    * optionally the S-matrix-corrected incoming-asymptote prediction,
      reported but not gated: the window does not see every late exit.
    """
    if not scenario.interacting:
        raise InvalidParameterError("interacting_fast_check needs a nonzero potential")
    frames = frames or build_frames(scenario)
    free_frames = free_frames or build_frames(scenario, NoPotential())
    src = FrameSource(frames)
    free_src = FrameSource(free_frames)
    t1 = scenario.horizon()
    R = max(scenario.radii)
    bins = scenario.bins
    forward = forward or bins[0]
    report = {"scenario_hash": scenario.hash(), "R": R, "t_window": [0.0, t1],
              "norm_drift": norm_drift(frames), "norm_drift_free": norm_drift(free_frames)}
    bm = boundary_mass(frames[len(frames) - 1])
    report["boundary_mass_end"] = bm
    r_cut = scenario.potential.r_cut
    inner = _mass_inside(frames, r_cut)
    report["mass_inside_r_cut"] = {"start": inner[0], "peak": float(np.max(inner)), "end": inner[-1]}
    # a bound component would keep weight near the potential
    report["bound_state_suspect"] = bool(inner[-1] > 0.5 * np.max(inner) and np.max(inner) > 1e-3)

    sphere = SphereSpec(R, 48, 16)
    table = flux_table(src, sphere, bins, [0.0, t1], rel_tol=1e-8, abs_tol=1e-10)
    table_free = flux_table(free_src, sphere, [forward], [0.0, t1], rel_tol=1e-8, abs_tol=1e-10)
    # all seeds in one pass per source: frame tables are built once
    n = scenario.n_traj
    x0 = np.concatenate([sample_positions(scenario.packet, n, s) for s in seeds])
    tr_all = integrate_ensemble(x0, src, (0.0, t1), (R,))
    tr0_all = integrate_ensemble(x0, free_src, (0.0, t1), (R,))
    fi = _bin_index(bins, forward)
    deficits = []
    per_seed = []
    first = None
    for j, s in enumerate(seeds):
        res = summarize(_rows(tr_all, j * n, (j + 1) * n), 0, bins, s)
        res0 = summarize(_rows(tr0_all, j * n, (j + 1) * n), 0, bins, s)
        first = first or res
        chk = cross_section_check(res, table)
        a = res.exit_bin == fi
        b = res0.exit_bin == fi
        d = float(b.mean() - a.mean())
        # paired standard error from per-trajectory differences
        se_pair = float(np.std(b.astype(float) - a.astype(float), ddof=1) / np.sqrt(n))
        deficits.append(d)
        per_seed.append({"seed": int(s), "pass_fraction": chk["pass_fraction_flux"],
                         "pass": chk["pass"], "forward_fraction": float(a.mean()),
                         "forward_fraction_free": float(b.mean()),
                         "deficit": d, "deficit_se": se_pair,
                         "aborts": res.aborts, "minus_fraction": res.minus_fraction(),
                         "bins": chk["bins"]})
    report["seeds"] = per_seed
    report["forward_flux"] = float(table.signed_total[fi])
    report["forward_flux_free"] = float(table_free.signed_total[0])
    report["flux_deficit"] = report["forward_flux_free"] - report["forward_flux"]
    signs = np.sign(deficits)
    report["deficit_sign_consistent"] = bool(np.all(signs == signs[0]) and signs[0] != 0)
    if with_prediction and isinstance(scenario.packet, GaussianPacket):
        try:
            pred = s_matrix_prediction(scenario.packet, scenario.potential, bins)
            free = momentum_probabilities(scenario.packet, bins)
            report["asymptote_prediction"] = {
                "s_matrix": pred.tolist(), "free": free.tolist(),
                "exit_fraction": first.sigma_hat.tolist(),
                "note": "incoming-asymptote approximation over an infinite window; "
                        "the run window is finite, so this is reported, not gated",
            }
        except InvalidParameterError as exc:
            report["asymptote_prediction"] = {"skipped": str(exc)}
    report["flux_vs_trajectories_pass"] = bool(all(p["pass"] for p in per_seed))
    report["norm_pass"] = bool(report["norm_drift"] <= 1e-8)
    report["pass"] = bool(report["flux_vs_trajectories_pass"] and report["norm_pass"]
                          and report["deficit_sign_consistent"]
                          and not report["bound_state_suspect"])
    return report


def _bin_index(bins, b: ConeBin) -> int:
    for i, bb in enumerate(bins):
        if bb is b:
            return i
    raise InvalidParameterError("forward bin must be one of the scenario bins")


def _rows(tr: EnsembleTrajectories, lo: int, hi: int) -> EnsembleTrajectories:
    """Trajectories lo..hi-1 of a batch, with their events."""
    m = (tr.event_row >= lo) & (tr.event_row < hi)
    return EnsembleTrajectories(
        x0=tr.x0[lo:hi], t0=tr.t0, t1=tr.t1, radii=tr.radii,
        final_positions=tr.final_positions[lo:hi], final_times=tr.final_times[lo:hi],
        status=tr.status[lo:hi], exit_times=tr.exit_times[lo:hi],
        exit_positions=tr.exit_positions[lo:hi], started_outside=tr.started_outside[lo:hi],
        event_row=tr.event_row[m] - lo, event_radius=tr.event_radius[m], event_t=tr.event_t[m],
        event_x=tr.event_x[m], event_sign=tr.event_sign[m],
        n_steps=None if tr.n_steps is None else tr.n_steps[lo:hi],
    )


def _mass_inside(frames: EvolutionFrames, radius: float) -> np.ndarray:
    g = frames.geometry
    x, y, z = g.mesh()
    mask = (x * x + y * y + z * z) <= radius * radius
    return np.array([float(np.sum(np.abs(f.values[mask]) ** 2) * g.cell_volume) for f in frames.fields])


# ---------------------------------------------------------------------------
# reports


def ensemble_report(scenario: ScatteringScenario, results: dict, tables: dict,
                    momentum=None, checks: dict | None = None, version: str = "") -> dict:
    """JSON-ready report: scenario hash, per-R per-bin statistics, checks."""
    per_r = {}
    for R, res in results.items():
        tab = tables.get(R)
        rows = {}
        z = None
        if tab is not None:
            z, se = binomial_z(res.sigma_hat, tab.signed_total, res.n_traj)
        for i, b in enumerate(res.bins):
            row = {"exits": int(res.exits[i]), "sigma_hat": float(res.sigma_hat[i]),
                   "se": float(res.sigma_se[i])}
            if tab is not None:
                row.update(signed_flux=float(tab.signed_total[i]),
                           abs_flux=float(tab.absolute_total[i]), z=float(z[i]))
            if momentum is not None:
                row["momentum_prediction"] = float(momentum[i])
            rows[b.label or str(i)] = row
        per_r[repr(float(R))] = {"bins": rows, "summary": res.summary()}
    return {"scenario_hash": scenario.hash(), "version": version, "scenario": scenario.to_dict(),
            "per_R": per_r, "checks": checks or {}}


def write_ensemble_csv(path, results: dict, tables: dict, momentum=None) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["R", "bin_id", "exits", "sigma_hat", "se", "signed_flux", "abs_flux", "z",
                    "momentum_prediction"])
        for R, res in results.items():
            tab = tables.get(R)
            z = binomial_z(res.sigma_hat, tab.signed_total, res.n_traj)[0] if tab is not None else None
            for i, b in enumerate(res.bins):
                w.writerow([repr(float(R)), b.label or str(i), int(res.exits[i]),
                            repr(float(res.sigma_hat[i])), repr(float(res.sigma_se[i])),
                            "" if tab is None else repr(float(tab.signed_total[i])),
                            "" if tab is None else repr(float(tab.absolute_total[i])),
                            "" if z is None else repr(float(z[i])),
                            "" if momentum is None else repr(float(momentum[i]))])
