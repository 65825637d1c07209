"""Seeded samplers for |psi|^2 in position or momentum space."""
from __future__ import annotations

import numpy as np
from scipy.stats import norm as _normal

from .errors import EnvelopeFailureError, InvalidParameterError
from .wavepacket import GaussianPacket, GridField, Superposition

MIN_ACCEPTANCE = 1e-3


def rng_for(seed, *key) -> np.random.Generator:
    """Independent generator for the substream ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


def _gaussian_draw(rng, n, mean, std):
    # per-axis inverse CDF of the normal distribution
    u = rng.random((n, 3))
    u = np.clip(u, 1e-300, 1 - 1e-16)
    return mean + std * _normal.ppf(u)


def _mixture_rejection(rng, n, packets, density, draw_component, chunk=None):
    """Rejection sampling of ``density`` against the mixture bound
    |sum a_i psi_i|^2 <= (sum |a_i|) * sum |a_i| |psi_i|^2."""
    weights = np.array([abs(p.amplitude) for p in packets])
    probs = weights / weights.sum()
    out = np.empty((0, 3))
    tried = accepted = 0
    chunk = chunk or max(4 * n, 1024)
    while len(out) < n:
        comp = rng.choice(len(packets), size=chunk, p=probs)
        x = np.empty((chunk, 3))
        for i in range(len(packets)):
            m = comp == i
            x[m] = draw_component(rng, int(m.sum()), packets[i])
        envelope = weights.sum() * sum(
            w * np.abs(density(p, x)) for w, p in zip(weights, packets)
        )
        target = np.abs(density(None, x))
        u = rng.random(chunk)
        keep = u * envelope <= target
        tried += chunk
        accepted += int(keep.sum())
        out = np.concatenate([out, x[keep]])
        if tried >= 20 * chunk and accepted / tried < MIN_ACCEPTANCE:
            raise EnvelopeFailureError(f"acceptance rate {accepted / tried:.2e}")
    return out[:n]


def sample_positions(psi, n: int, seed, t: float = 0.0) -> np.ndarray:
    """n i.i.d. draws from |psi_t|^2 (psi normalized)."""
    rng = rng_for(seed, 0)
    if isinstance(psi, GaussianPacket):
        return _gaussian_draw(rng, n, psi.center_at(t), psi.width_at(t))
    if isinstance(psi, Superposition):
        packets = [p.evolved(t) for p in psi.packets]
        sup = Superposition(tuple(packets))

        def dens(p, x):
            src = sup if p is None else p
            return np.abs(src(x)) ** 2 / (1.0 if p is None else abs(p.amplitude) ** 2)

        def draw(rng, m, p):
            return _gaussian_draw(rng, m, p.center_at(), p.width_at())

        return _mixture_rejection(rng, n, packets, dens, draw)
    if isinstance(psi, GridField):
        return _sample_grid(rng, psi, n)
    raise InvalidParameterError(f"cannot sample from {type(psi).__name__}")


def _sample_grid(rng, psi: GridField, n: int) -> np.ndarray:
    from .interpolate import trilinear

    rho = psi.density()
    w = rho / rho.sum()
    pts = psi.mesh()
    mean = np.array([np.sum(w * c) for c in pts])
    std = np.sqrt(np.array([np.sum(w * (c - m) ** 2) for c, m in zip(pts, mean)]))
    std = np.maximum(std, 2 * psi.spacing)
    env = np.exp(-0.5 * sum(((c - m) / s) ** 2 for c, m, s in zip(pts, mean, std)))
    env /= (2 * np.pi) ** 1.5 * np.prod(std)
    target = rho / (rho.sum() * psi.cell_volume)
    bound = 1.2 * float(np.max(target / np.maximum(env, 1e-300)))
    lo, hi = psi.origin, psi.upper() - 1e-9
    out = np.empty((0, 3))
    tried = accepted = 0
    chunk = max(4 * n, 1024)
    while len(out) < n:
        x = _gaussian_draw(rng, chunk, mean, std)
        inside = np.all((x >= lo) & (x <= hi), axis=1)
        x = x[inside]
        q = np.exp(-0.5 * np.sum(((x - mean) / std) ** 2, axis=1)) / ((2 * np.pi) ** 1.5 * np.prod(std))
        p = np.abs(trilinear(psi, psi.values, x)) ** 2 / (rho.sum() * psi.cell_volume)
        keep = rng.random(len(x)) * bound * q <= p
        tried += chunk
        accepted += int(keep.sum())
        out = np.concatenate([out, x[keep]])
        if tried >= 20 * chunk and accepted / tried < MIN_ACCEPTANCE:
            raise EnvelopeFailureError(f"acceptance rate {accepted / tried:.2e}")
    return out[:n]


def sample_momenta(psi, n: int, seed) -> np.ndarray:
    """n i.i.d. draws from |psi_hat|^2."""
    rng = rng_for(seed, 1)
    packets = list(getattr(psi, "packets", (psi,)))
    if len(packets) == 1:
        p = packets[0]
        return _gaussian_draw(rng, n, p.k0, 1.0 / (2 * p.sigma))

    def dens(p, k):
        if p is None:
            return np.abs(psi.momentum_amplitude(k)) ** 2
        return np.abs(p.momentum_amplitude(k)) ** 2 / abs(p.amplitude) ** 2

    def draw(rng, m, p):
        return _gaussian_draw(rng, m, p.k0, 1.0 / (2 * p.sigma))

    return _mixture_rejection(rng, n, packets, dens, draw)


def speed_quantile(psi, q: float = 1e-3, n: int = 200_000, seed: int = 12345) -> float:
    """q-quantile of |v| under |psi_hat|^2 (Monte Carlo, fixed seed)."""
    k = sample_momenta(psi, n, seed)
    return float(np.quantile(np.linalg.norm(k, axis=1), q))


# name used for initial-condition draws in scenario code
sample_initial_positions = sample_positions
