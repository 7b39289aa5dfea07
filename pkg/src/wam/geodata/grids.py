"""GeoGrid and its on-disk format.

A grid file is::

    WAMGRID 1
    {"variable": ..., "units": ..., "timestamp": ..., "crs": ..., "shape": [rows, cols]}
    <float64 little-endian: lat axis, lon axis, values row-major>

For UTM grids (``crs`` like ``"utm:30N"``) the two axes hold northings and
eastings in metres instead of degrees.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np

GRID_MAGIC = b"WAMGRID 1\n"
DECIMAL = "decimal"


class GridFormatError(ValueError):
    pass


def _strictly_monotone(axis: np.ndarray) -> bool:
    d = np.diff(axis)
    return bool(np.all(d > 0) or np.all(d < 0))


@dataclass
class GeoGrid:
    variable_id: str
    values: np.ndarray
    lat_axis: np.ndarray
    lon_axis: np.ndarray
    timestamp: datetime
    units: str = ""
    crs: str = DECIMAL

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        self.lat_axis = np.asarray(self.lat_axis, dtype=np.float64)
        self.lon_axis = np.asarray(self.lon_axis, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"{self.variable_id}: grid values must be 2-D, got shape {self.values.shape}")
        if self.values.shape != (self.lat_axis.size, self.lon_axis.size):
            raise ValueError(f"{self.variable_id}: axes {self.lat_axis.size}x{self.lon_axis.size} "
                             f"do not match values {self.values.shape}")
        for name, axis in (("lat", self.lat_axis), ("lon", self.lon_axis)):
            if axis.size > 1 and not _strictly_monotone(axis):
                raise ValueError(f"{self.variable_id}: {name} axis is not strictly monotone")
        if self.crs == DECIMAL:
            if np.any(np.abs(self.lat_axis) > 90) or np.any(np.abs(self.lon_axis) > 180):
                raise ValueError(f"{self.variable_id}: decimal coordinates out of range")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def header(self) -> dict[str, Any]:
        return {"variable": self.variable_id, "units": self.units, "timestamp": self.timestamp.isoformat(),
                "crs": self.crs, "shape": list(self.values.shape)}


def write_grid(path: str | Path, grid: GeoGrid) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(grid.header(), sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(header + b"\n")
        for arr in (grid.lat_axis, grid.lon_axis, grid.values):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_grid(path: str | Path) -> GeoGrid:
    raw = Path(path).read_bytes()
    if not raw.startswith(GRID_MAGIC):
        raise GridFormatError(f"{path}: missing WAMGRID header")
    end = raw.index(b"\n", len(GRID_MAGIC))
    header = json.loads(raw[len(GRID_MAGIC):end])
    rows, cols = header["shape"]
    body = np.frombuffer(raw[end + 1:], dtype="<f8")
    if body.size != rows + cols + rows * cols:
        raise GridFormatError(f"{path}: expected {rows + cols + rows * cols} values, found {body.size}")
    return GeoGrid(
        variable_id=header["variable"],
        values=body[rows + cols:].reshape(rows, cols).copy(),
        lat_axis=body[:rows].copy(),
        lon_axis=body[rows:rows + cols].copy(),
        timestamp=datetime.fromisoformat(header["timestamp"]),
        units=header.get("units", ""),
        crs=header.get("crs", DECIMAL),
    )


def write_manifest(path: str | Path, grids: list[tuple[str, GeoGrid]], **extra: Any) -> None:
    """List grid files (paths relative to the manifest) with their identifying header fields."""
    entries = [{"path": rel, **{k: g.header()[k] for k in ("variable", "timestamp", "crs")}} for rel, g in grids]
    doc = {"format": "wam-grid-manifest", "version": 1, **extra, "grids": entries}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> tuple[dict[str, Any], list[GeoGrid]]:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("format") != "wam-grid-manifest":
        raise GridFormatError(f"{path}: not a grid manifest")
    grids = [read_grid(path.parent / entry["path"]) for entry in doc["grids"]]
    return doc, grids
