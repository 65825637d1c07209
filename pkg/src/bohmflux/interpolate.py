"""Trilinear interpolation on uniform grids."""
from __future__ import annotations

import numpy as np

from .errors import GeometryError


def cell_coordinates(origin, spacing: float, dims, x):
    """Lower-corner indices and fractional offsets of points ``x`` (n, 3).

    Raises GeometryError if any point is outside the interpolation domain.
    """
    s = (np.asarray(x, dtype=float) - origin) / spacing
    i0 = np.floor(s).astype(np.int64)
    hi = np.asarray(dims) - 2
    bad = np.any((i0 < 0) | (i0 > hi), axis=-1)
    if np.any(bad):
        raise GeometryError(f"{int(bad.sum())} point(s) outside grid interior")
    return i0, s - i0


def trilinear_flat(table: np.ndarray, dims, i0, frac) -> np.ndarray:
    """Interpolate ``table`` of shape (nx*ny*nz, C) at precomputed cells."""
    nx, ny, nz = dims
    base = (i0[:, 0] * ny + i0[:, 1]) * nz + i0[:, 2]
    fx, fy, fz = frac[:, 0:1], frac[:, 1:2], frac[:, 2:3]
    gx, gy, gz = 1 - fx, 1 - fy, 1 - fz
    sx, sy = ny * nz, nz
    out = table[base] * (gx * gy * gz)
    out += table[base + 1] * (gx * gy * fz)
    out += table[base + sy] * (gx * fy * gz)
    out += table[base + sy + 1] * (gx * fy * fz)
    out += table[base + sx] * (fx * gy * gz)
    out += table[base + sx + 1] * (fx * gy * fz)
    out += table[base + sx + sy] * (fx * fy * gz)
    out += table[base + sx + sy + 1] * (fx * fy * fz)
    return out


def trilinear(field, values: np.ndarray, x) -> np.ndarray:
    """Interpolate ``values`` (shape ``field.dims + extra``) at points ``x``."""
    x = np.asarray(x, dtype=float)
    pts = x.reshape(-1, 3)
    extra = values.shape[3:]
    table = values.reshape(-1, int(np.prod(extra, dtype=int)))
    i0, frac = cell_coordinates(field.origin, field.spacing, field.dims, pts)
    out = trilinear_flat(table, field.dims, i0, frac)
    return out.reshape(x.shape[:-1] + extra)
