"""Bilinear resampling on regular (possibly descending) coordinate axes."""
from __future__ import annotations

import numpy as np

from .grids import GeoGrid


class CoverageError(ValueError):
    """Target coordinates fall outside the source grid; no extrapolation is done."""


def _locate(axis: np.ndarray, targets: np.ndarray, what: str):
    axis = np.asarray(axis, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if axis.size < 2:
        raise CoverageError(f"{what} axis needs at least two points to interpolate")
    descending = axis[0] > axis[-1]
    asc = axis[::-1] if descending else axis
    span = asc[-1] - asc[0]
    tol = 1e-9 * max(abs(span), 1.0)
    if np.any(targets < asc[0] - tol) or np.any(targets > asc[-1] + tol):
        raise CoverageError(f"{what} targets [{targets.min()}, {targets.max()}] outside source "
                            f"coverage [{asc[0]}, {asc[-1]}]")
    clipped = np.clip(targets, asc[0], asc[-1])
    idx = np.clip(np.searchsorted(asc, clipped, side="right") - 1, 0, asc.size - 2)
    frac = (clipped - asc[idx]) / (asc[idx + 1] - asc[idx])
    if descending:
        # position idx in the ascending copy maps to size-1-idx in the original
        lo = axis.size - 1 - idx
        return lo, lo - 1, frac
    return idx, idx + 1, frac


def bilinear_points(values: np.ndarray, row_axis: np.ndarray, col_axis: np.ndarray,
                    rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Interpolate ``values`` at scattered (row coordinate, col coordinate) pairs."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    r0, r1, fr = _locate(row_axis, rows.reshape(-1), "row")
    c0, c1, fc = _locate(col_axis, cols.reshape(-1), "column")
    top = values[r0, c0] * (1 - fc) + values[r0, c1] * fc
    bottom = values[r1, c0] * (1 - fc) + values[r1, c1] * fc
    return (top * (1 - fr) + bottom * fr).reshape(rows.shape)


def resample_bilinear(src: GeoGrid, target_lat_axis, target_lon_axis) -> GeoGrid:
    target_lat_axis = np.asarray(target_lat_axis, dtype=np.float64)
    target_lon_axis = np.asarray(target_lon_axis, dtype=np.float64)
    r0, r1, fr = _locate(src.lat_axis, target_lat_axis, f"{src.variable_id} latitude")
    c0, c1, fc = _locate(src.lon_axis, target_lon_axis, f"{src.variable_id} longitude")
    v = src.values
    along_lon_lo = v[r0][:, c0] * (1 - fc) + v[r0][:, c1] * fc
    along_lon_hi = v[r1][:, c0] * (1 - fc) + v[r1][:, c1] * fc
    out = along_lon_lo * (1 - fr)[:, None] + along_lon_hi * fr[:, None]
    return GeoGrid(src.variable_id, out, target_lat_axis, target_lon_axis, src.timestamp, src.units)
