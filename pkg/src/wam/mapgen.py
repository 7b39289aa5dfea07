"""Sliding-window regional inference and raster output."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .core import no_grad
from .geodata.fusion import FrameViolation, GridStore, fuse_sample
from .geodata.variables import LABELS
from .models import ModelState

SENTINEL_RGB = (255, 0, 0)


@dataclass
class AssessmentRaster:
    """Predictions for one label over the full region grid; NaN marks cells without a full window."""

    label_id: str
    values: np.ndarray
    lat_axis: np.ndarray
    lon_axis: np.ndarray
    date: date
    frame: tuple[int, int]  # undefined cells before / after the defined block along each axis
    synthetic: bool = False

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.values)

    def interior(self) -> np.ndarray:
        lead, trail = self.frame
        h, w = self.values.shape
        return self.values[lead:h - trail, lead:w - trail]


def window_range(n: int, window: int) -> range:
    half = window // 2
    if n < window:
        raise FrameViolation(f"region extent {n} is smaller than the {window}-cell window")
    return range(half, n - window + half + 1)


def enumerate_windows(shape: tuple[int, int], window: int = 128, stride: int = 1) -> Iterator[tuple[int, int]]:
    """Row-major window centres whose full window fits inside a ``shape`` region."""
    if stride < 1:
        raise ValueError("stride must be positive")
    rows = window_range(shape[0], window)
    cols = window_range(shape[1], window)
    for r in rows[::stride]:
        for c in cols[::stride]:
            yield r, c


def predict_single(state: ModelState, tensor: np.ndarray) -> np.ndarray:
    """Natural-unit prediction for one fused window."""
    net = state.network
    with no_grad():
        out = net.regress(np.asarray(tensor)[None], "infer").data
    return state.stats.denormalize_labels(out.astype(np.float64))[0]


def predict_raster(state: ModelState, store: GridStore, day: date, window: int | None = None, stride: int = 1,
                   threads: int = 1, predictor: Callable[[np.ndarray], np.ndarray] | None = None) -> list[AssessmentRaster]:
    """One raster per label; each defined cell is the standalone prediction for the window centred there.

    Windows are evaluated one at a time so every cell matches ``predict_single``
    exactly, whatever the thread count.
    """
    window = window or state.config.input_size
    if state.stats is None:
        raise ValueError("model state carries no normalisation statistics")
    predictor = predictor or (lambda t: predict_single(state, t))
    centers = list(enumerate_windows(store.shape, window, stride))
    lat, lon = store.lat_axis, store.lon_axis

    def run(rc: tuple[int, int]) -> np.ndarray:
        r, c = rc
        sample = fuse_sample((float(lat[r]), float(lon[c])), day, store, state.stats, window)
        return predictor(sample.tensor)

    store.channel_stack(day)  # fill the cache before any worker touches it
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            preds = list(pool.map(run, centers))
    else:
        preds = [run(rc) for rc in centers]

    values = np.full((len(LABELS),) + store.shape, np.nan)
    for (r, c), p in zip(centers, preds):
        values[:, r, c] = p
    half = window // 2
    frame = (half, window - half - 1)
    synthetic = bool(store.meta.get("synthetic", False))
    return [AssessmentRaster(label, values[j], lat, lon, day, frame, synthetic) for j, label in enumerate(LABELS)]


def _scale(raster: AssessmentRaster) -> tuple[float, float]:
    vals = raster.values[raster.defined]
    if vals.size == 0:
        raise ValueError(f"raster {raster.label_id} has no defined cells")
    return float(vals.min()), float(vals.max())


def to_gray(raster: AssessmentRaster) -> np.ndarray:
    """Linear 8-bit scaling of defined cells: minimum -> 0, maximum -> 255."""
    lo, hi = _scale(raster)
    span = hi - lo
    scaled = np.zeros(raster.values.shape) if span == 0 else (raster.values - lo) / span
    return np.rint(np.nan_to_num(scaled) * 255).astype(np.uint8)


def emit(raster: AssessmentRaster, out_dir: str | Path, fmt: str = "pgm") -> Path:
    """Write one raster; ``pgm`` writes a binary portable pixmap plus a JSON sidecar, ``csv`` is lossless."""
    out_dir = Path(out_dir)
    stem = f"{raster.label_id}_{raster.date.isoformat()}"
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if fmt == "csv":
            path = out_dir / f"{stem}.csv"
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["lat", "lon", raster.label_id])
                for i, la in enumerate(raster.lat_axis):
                    for j, lo in enumerate(raster.lon_axis):
                        v = raster.values[i, j]
                        w.writerow([repr(float(la)), repr(float(lo)), repr(float(v)) if np.isfinite(v) else ""])
            return path
        if fmt != "pgm":
            raise ValueError(f"unknown raster format {fmt!r}")
        gray = to_gray(raster)
        rgb = np.repeat(gray[..., None], 3, axis=-1)
        rgb[~raster.defined] = SENTINEL_RGB
        # north up: the first image row is the largest latitude
        if raster.lat_axis[0] < raster.lat_axis[-1]:
            rgb = rgb[::-1]
        h, w = gray.shape
        path = out_dir / f"{stem}.ppm"
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(np.ascontiguousarray(rgb).tobytes())
        lo, hi = _scale(raster)
        sidecar = {
            "label": raster.label_id, "date": raster.date.isoformat(), "scale": {"min": lo, "max": hi},
            "encoding": "gray ramp in all three channels, value = min + gray / 255 * (max - min)",
            "undefined_rgb": list(SENTINEL_RGB), "frame": list(raster.frame), "north_up": True,
            "lat": [float(v) for v in raster.lat_axis], "lon": [float(v) for v in raster.lon_axis],
            "synthetic": raster.synthetic,
        }
        (out_dir / f"{stem}.json").write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
        return path
    except OSError as exc:
        raise OSError(f"cannot write raster to {out_dir}: {exc}") from exc


def read_raster_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    lat = np.array(sorted({float(r[0]) for r in rows}))
    lon = np.array(sorted({float(r[1]) for r in rows}))
    values = np.full((lat.size, lon.size), np.nan)
    li = {v: i for i, v in enumerate(lat)}
    lj = {v: j for j, v in enumerate(lon)}
    for la, lo, v in rows:
        values[li[float(la)], lj[float(lo)]] = float(v) if v else np.nan
    return lat, lon, values


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, dims, maxval, body = data.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit binary portable pixmap")
    w, h = map(int, dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
