"""Early fusion: harmonise raw grids onto one decimal grid and cut sample windows."""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..core import read_container, write_container
from .grids import DECIMAL, GeoGrid, read_manifest, write_grid, write_manifest
from .normalize import NormalizationStats
from .resample import bilinear_points, resample_bilinear
from .utm import decimal_to_utm
from .variables import (
    CHANNEL_ORDER,
    DAILY_VARIABLES,
    N_CHANNELS,
    REFLECTANCE_BANDS,
    TREND_VARIABLES,
    VARIABLE_SPECS,
    channel_fingerprint,
)


class MissingDataError(LookupError):
    pass


class FrameViolation(ValueError):
    """A sample window would extend past the harmonised coverage."""


def greenness_index(red: GeoGrid, green: GeoGrid, blue: GeoGrid) -> GeoGrid:
    """(2G - B - R) / (2G + B + R); cells with a zero denominator become NaN (missing)."""
    if not (red.shape == green.shape == blue.shape):
        raise ValueError(f"reflectance grids differ in shape: {red.shape}, {green.shape}, {blue.shape}")
    num = 2 * green.values - blue.values - red.values
    den = 2 * green.values + blue.values + red.values
    with np.errstate(divide="ignore", invalid="ignore"):
        gi = np.where(den != 0, num / np.where(den != 0, den, 1.0), np.nan)
    return GeoGrid("gi", gi, green.lat_axis, green.lon_axis, green.timestamp, "1", green.crs)


def select_daily_reading(readings: Mapping[int, GeoGrid], variable: str = "?", day: date | None = None) -> GeoGrid:
    """Prefer the 12:00 reading, fall back to 18:00."""
    for hour in (12, 18):
        if hour in readings:
            return readings[hour]
    raise MissingDataError(f"no 12:00 or 18:00 reading for {variable} on {day}")


def trend_diff(series: Sequence[tuple[date, GeoGrid]], sample_date: date) -> GeoGrid:
    """Difference between the two most recent grids dated at or before ``sample_date``."""
    dates = [d for d, _ in series]
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise ValueError("trend series dates must be strictly increasing")
    usable = [(d, g) for d, g in series if d <= sample_date]
    if len(usable) < 2:
        name = series[0][1].variable_id if series else "?"
        raise MissingDataError(f"{name}: fewer than two grids at or before {sample_date}")
    (_, prev), (_, last) = usable[-2], usable[-1]
    return GeoGrid(last.variable_id, last.values - prev.values, last.lat_axis, last.lon_axis,
                   last.timestamp, last.units, last.crs)


def latest_at(series: Sequence[tuple[date, GeoGrid]], sample_date: date) -> GeoGrid:
    usable = [g for d, g in series if d <= sample_date]
    if not usable:
        raise MissingDataError(f"no grid at or before {sample_date}")
    return usable[-1]


def _utm_zone(crs: str) -> tuple[int, str]:
    # "utm:30N"
    code = crs.split(":", 1)[1]
    return int(code[:-1]), code[-1]


def _impute_mean(values: np.ndarray) -> np.ndarray:
    missing = ~np.isfinite(values)
    if missing.all():
        raise MissingDataError("greenness index grid has no defined cells")
    if missing.any():
        values = values.copy()
        values[missing] = values[~missing].mean()
    return values


def to_decimal_grid(grid: GeoGrid, lat_axis: np.ndarray, lon_axis: np.ndarray) -> GeoGrid:
    """Bring any grid onto the decimal target axes (UTM grids are reprojected)."""
    if grid.crs == DECIMAL:
        return resample_bilinear(grid, lat_axis, lon_axis)
    zone, hemisphere = _utm_zone(grid.crs)
    lat2d, lon2d = np.meshgrid(lat_axis, lon_axis, indexing="ij")
    east, north = decimal_to_utm(lat2d, lon2d, zone, hemisphere)
    values = bilinear_points(grid.values, grid.lat_axis, grid.lon_axis, north, east)
    return GeoGrid(grid.variable_id, values, lat_axis, lon_axis, grid.timestamp, grid.units)


@dataclass
class GridStore:
    """Read-only repository of grids on one harmonised decimal grid."""

    lat_axis: np.ndarray
    lon_axis: np.ndarray
    daily: dict[str, dict[date, dict[int, GeoGrid]]] = field(default_factory=dict)
    trend: dict[str, list[tuple[date, GeoGrid]]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    _stacks: dict[date, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lat_axis.size, self.lon_axis.size

    @classmethod
    def from_grids(cls, grids: Iterable[GeoGrid], meta: dict | None = None) -> "GridStore":
        grids = list(grids)
        if not grids:
            raise ValueError("empty grid collection")
        lat, lon = grids[0].lat_axis, grids[0].lon_axis
        store = cls(lat, lon, meta=dict(meta or {}))
        for g in grids:
            if not (np.array_equal(g.lat_axis, lat) and np.array_equal(g.lon_axis, lon)):
                raise ValueError(f"{g.variable_id} at {g.timestamp} is not on the harmonised axes")
            store.add(g)
        store.sort()
        return store

    def add(self, g: GeoGrid) -> None:
        if g.variable_id in DAILY_VARIABLES:
            self.daily.setdefault(g.variable_id, {}).setdefault(g.timestamp.date(), {})[g.timestamp.hour] = g
        else:
            self.trend.setdefault(g.variable_id, []).append((g.timestamp.date(), g))

    def sort(self) -> None:
        for series in self.trend.values():
            series.sort(key=lambda item: item[0])

    def sample_dates(self) -> list[date]:
        """Dates for which every channel can be built."""
        days = None
        for var in DAILY_VARIABLES:
            have = set(self.daily.get(var, {}))
            days = have if days is None else days & have
        out = []
        for d in sorted(days or ()):
            try:
                self.channel_stack(d)
            except MissingDataError:
                continue
            out.append(d)
        return out

    def channel_grids(self, day: date) -> list[GeoGrid]:
        out = []
        for spec in VARIABLE_SPECS:
            var = spec.variable_id
            if var in DAILY_VARIABLES:
                out.append(select_daily_reading(self.daily.get(var, {}).get(day, {}), var, day))
            elif var == "gi":
                out.append(latest_at(self.trend.get("gi", []), day))
            else:
                out.append(trend_diff(self.trend.get(var, []), day))
        return out

    def channel_stack(self, day: date) -> np.ndarray:
        """Raw (unnormalised) ``(H, W, 9)`` stack for a date, cached."""
        if day not in self._stacks:
            self._stacks[day] = np.stack([g.values for g in self.channel_grids(day)], axis=-1)
        return self._stacks[day]

    def locate(self, lat: float, lon: float) -> tuple[int, int]:
        """Index of the harmonised cell containing the coordinate."""
        idx = []
        for value, axis, name in ((lat, self.lat_axis, "latitude"), (lon, self.lon_axis, "longitude")):
            i = int(np.argmin(np.abs(axis - value)))
            half = abs(axis[1] - axis[0]) / 2 if axis.size > 1 else 0.0
            if abs(axis[i] - value) > half * (1 + 1e-9):
                raise FrameViolation(f"{name} {value} lies outside the harmonised grid")
            idx.append(i)
        return idx[0], idx[1]

    def window(self, row: int, col: int, day: date, size: int) -> np.ndarray:
        """Raw ``(size, size, 9)`` window whose centre cell (size//2, size//2) is (row, col)."""
        half = size // 2
        r0, c0 = row - half, col - half
        h, w = self.shape
        if r0 < 0 or c0 < 0 or r0 + size > h or c0 + size > w:
            raise FrameViolation(f"{size}x{size} window centred on cell ({row}, {col}) exceeds the {h}x{w} coverage")
        return self.channel_stack(day)[r0:r0 + size, c0:c0 + size, :]

    def save(self, out_dir: str | Path, **extra) -> Path:
        out_dir = Path(out_dir)
        entries = []
        for var, by_day in sorted(self.daily.items()):
            for d, by_hour in sorted(by_day.items()):
                for hour, g in sorted(by_hour.items()):
                    rel = f"grids/{var}_{d.isoformat()}_{hour:02d}.grid"
                    write_grid(out_dir / rel, g)
                    entries.append((rel, g))
        for var, series in sorted(self.trend.items()):
            for d, g in series:
                rel = f"grids/{var}_{d.isoformat()}.grid"
                write_grid(out_dir / rel, g)
                entries.append((rel, g))
        manifest = out_dir / "manifest.json"
        write_manifest(manifest, entries, kind="harmonized", **{**self.meta, **extra})
        return manifest

    @classmethod
    def load(cls, manifest: str | Path) -> "GridStore":
        doc, grids = read_manifest(manifest)
        meta = {k: v for k, v in doc.items() if k not in ("grids", "format", "version", "kind")}
        return cls.from_grids(grids, meta)


def harmonize(raw: Iterable[GeoGrid], lat_axis: np.ndarray, lon_axis: np.ndarray, meta: dict | None = None) -> GridStore:
    """Resample every raw grid onto the decimal target axes.

    Reflectance bands are combined into the greenness index on their native
    grid first; missing index cells are filled with the grid mean before
    reprojection.
    """
    lat_axis = np.asarray(lat_axis, dtype=np.float64)
    lon_axis = np.asarray(lon_axis, dtype=np.float64)
    bands: dict[datetime, dict[str, GeoGrid]] = {}
    out = []
    for g in raw:
        if g.variable_id in REFLECTANCE_BANDS:
            bands.setdefault(g.timestamp, {})[g.variable_id] = g
        elif g.variable_id == "gi":
            filled = GeoGrid("gi", _impute_mean(g.values), g.lat_axis, g.lon_axis, g.timestamp, g.units, g.crs)
            out.append(to_decimal_grid(filled, lat_axis, lon_axis))
        elif g.variable_id in DAILY_VARIABLES or g.variable_id in TREND_VARIABLES:
            out.append(to_decimal_grid(g, lat_axis, lon_axis))
        else:
            raise ValueError(f"unknown variable {g.variable_id!r}")
    for ts, group in sorted(bands.items()):
        missing = set(REFLECTANCE_BANDS) - set(group)
        if missing:
            raise MissingDataError(f"reflectance bands {sorted(missing)} missing at {ts}")
        gi = greenness_index(group["red"], group["green"], group["blue"])
        gi = GeoGrid("gi", _impute_mean(gi.values), gi.lat_axis, gi.lon_axis, ts, "1", gi.crs)
        out.append(to_decimal_grid(gi, lat_axis, lon_axis))
    return GridStore.from_grids(out, meta)


@dataclass
class FusedSample:
    tensor: np.ndarray
    center: tuple[float, float]
    date: date
    label: np.ndarray | None = None


def fuse_sample(center: tuple[float, float], day: date, store: GridStore,
                stats: NormalizationStats | None, window: int = 128) -> FusedSample:
    """Cut the ``window x window x 9`` sample around ``center`` and z-score it.

    With ``stats=None`` the raw stacked values are returned (used to fit the
    statistics in the first place).
    """
    row, col = store.locate(*center)
    raw = store.window(row, col, day, window)
    if stats is None:
        tensor = raw.astype(np.float32)
    else:
        if stats.channel_order != CHANNEL_ORDER:
            raise ValueError("normalization stats were fitted for a different channel order")
        tensor = stats.normalize_inputs(raw).astype(np.float32)
    return FusedSample(tensor, (float(center[0]), float(center[1])), day)


@dataclass
class SampleSet:
    """A batch of fused samples stored column-wise."""

    tensors: np.ndarray
    centers: np.ndarray
    dates: list[date]
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.tensors.shape[0]

    def subset(self, idx: Sequence[int]) -> "SampleSet":
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(self.tensors[idx], self.centers[idx], [self.dates[i] for i in idx],
                         None if self.labels is None else self.labels[idx], dict(self.meta))

    def samples(self) -> list[FusedSample]:
        return [FusedSample(self.tensors[i], tuple(self.centers[i]), self.dates[i],
                            None if self.labels is None else self.labels[i]) for i in range(len(self))]

    def save(self, path: str | Path) -> None:
        arrays = {"tensors": self.tensors, "centers": self.centers,
                  "dates": np.array([d.toordinal() for d in self.dates], dtype=np.int64)}
        if self.labels is not None:
            arrays["labels"] = np.asarray(self.labels, dtype=np.float64)
        meta = {"kind": "samples", "channel_order": list(CHANNEL_ORDER),
                "fingerprint": channel_fingerprint(), **self.meta}
        write_container(path, meta, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "SampleSet":
        meta, arrays = read_container(path)
        if tuple(meta.get("channel_order", ())) != CHANNEL_ORDER:
            raise ValueError(f"{path}: channel order {meta.get('channel_order')} differs from {CHANNEL_ORDER}")
        meta = {k: v for k, v in meta.items() if k not in ("kind", "channel_order", "fingerprint")}
        dates = [date.fromordinal(int(o)) for o in arrays["dates"]]
        return cls(arrays["tensors"], arrays["centers"], dates, arrays.get("labels"), meta)


def build_sample_set(points: Sequence[tuple[float, float, date]], store: GridStore,
                     stats: NormalizationStats | None, window: int,
                     labels: np.ndarray | None = None, meta: dict | None = None) -> SampleSet:
    tensors = np.empty((len(points), window, window, N_CHANNELS), dtype=np.float32)
    for i, (lat, lon, d) in enumerate(points):
        tensors[i] = fuse_sample((lat, lon), d, store, stats, window).tensor
    centers = np.array([(p[0], p[1]) for p in points], dtype=np.float64).reshape(-1, 2)
    return SampleSet(tensors, centers, [p[2] for p in points], labels, dict(meta or {}))


def read_points(path: str | Path) -> tuple[list[tuple[float, float, date]], np.ndarray | None]:
    """Read a sample-point CSV (lat, lon, date[, six label columns])."""
    import csv

    points, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        label_cols = [c for c in (reader.fieldnames or []) if c not in ("id", "lat", "lon", "date")]
        for row in reader:
            points.append((float(row["lat"]), float(row["lon"]), date.fromisoformat(row["date"])))
            if label_cols:
                labels.append([float(row[c]) for c in label_cols])
    return points, (np.array(labels) if labels else None)

