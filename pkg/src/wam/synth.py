"""Synthetic stand-in for the private wildfire dataset.

Everything produced here is synthetic and flagged as such in every manifest.
The generator writes raw grids in the same shapes the real sources have:
daily wind components on a coarse decimal grid (12:00 and/or 18:00), six
atmospheric fields on the greenness-index dates (1st/11th/21st), and red/green/
blue reflectance on a UTM grid from which the greenness index is computed.

Label oracle
------------
Labels are a fixed function of the z-scored sample window. With ``m[c]`` the
window mean and ``s[c]`` the window standard deviation of channel ``c``::

    wind = sqrt(m[u10]^2 + m[v10]^2 + 0.25)
    dry  = 0.6 m[gi] - 0.5 m[dewpoint] + 0.4 m[net_solar]
    heat = 0.5 m[thermal_down] + 0.3 m[net_thermal] - 0.3 m[ozone]
    z1 = 0.8 wind + dry
    z2 = 0.6 wind + heat + 0.3 s[gi]

    burnt_area_m        = 8000 exp(0.7 z1)
    control_time_min    = 90 exp(0.5 z2 + 0.2 z1)
    extinction_time_min = 240 exp(0.45 z1 + 0.35 z2)
    human_units         = 15 softplus(1 + z1 + 0.5 z2)
    heavy_units         = 1.5 softplus(0.5 + 0.8 z2)
    aerial_units        = softplus(z1 + z2 - 0.5)

each multiplied by ``exp(noise * eps)`` with seeded standard normal ``eps``.
All six are positive by construction.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .geodata.fusion import GridStore, SampleSet, build_sample_set, harmonize
from .geodata.grids import GeoGrid, write_grid, write_manifest
from .geodata.normalize import NormalizationStats, zscore_fit
from .geodata.utm import decimal_to_utm
from .geodata.variables import CHANNEL_ORDER, LABELS, TREND_VARIABLES

_CH = {name: i for i, name in enumerate(CHANNEL_ORDER)}

# (offset, scale, trend scale) per raw variable, loosely physical
_ATMOS = {
    "u10": (1.5, 3.0, 0.0),
    "v10": (0.5, 3.0, 0.0),
    "d2m": (284.0, 4.0, 1.5),
    "ssr": (2.0e7, 2.5e6, 1.0e6),
    "str": (-6.0e6, 8.0e5, 3.0e5),
    "strd": (3.1e7, 1.5e6, 6.0e5),
    "ssrd": (2.4e7, 2.8e6, 1.1e6),
    "tco3": (7.0e-3, 2.5e-4, 1.0e-4),
}


def random_field(lat_axis, lon_axis, corr_len: float, seed: int, variable: str = "field",
                 timestamp: datetime = datetime(2000, 1, 1), units: str = "1") -> GeoGrid:
    """Smooth unit-variance Gaussian field with correlation length ``corr_len`` (in cells).

    White noise is smoothed by a separable Gaussian kernel whose width makes the
    autocorrelation at lag ``corr_len`` equal to exp(-1).
    """
    lat_axis = np.asarray(lat_axis, dtype=np.float64)
    lon_axis = np.asarray(lon_axis, dtype=np.float64)
    values = smooth_noise((lat_axis.size, lon_axis.size), corr_len, np.random.default_rng(seed))
    return GeoGrid(variable, values, lat_axis, lon_axis, timestamp, units)


def _smoothing_matrix(n: int, sigma: float) -> np.ndarray:
    # noise lattice spacing grows with sigma so huge correlation lengths stay cheap
    step = max(1.0, sigma / 4.0)
    pad = 4.0 * sigma
    nodes = np.arange(-pad, n - 1 + pad + step, step)
    d = np.arange(n)[:, None] - nodes[None, :]
    w = np.exp(-0.5 * (d / sigma) ** 2)
    # continuous white-noise normalisation: integral of w^2 = sigma sqrt(pi)
    return w * np.sqrt(step / (sigma * np.sqrt(np.pi)))


def smooth_noise(shape: tuple[int, int], corr_len: float, rng: np.random.Generator) -> np.ndarray:
    if corr_len <= 0:
        raise ValueError(f"correlation length must be positive, got {corr_len}")
    sigma = corr_len / 2.0
    ky = _smoothing_matrix(shape[0], sigma)
    kx = _smoothing_matrix(shape[1], sigma)
    noise = rng.standard_normal((ky.shape[1], kx.shape[1]))
    return ky @ noise @ kx.T


def _softplus(x):
    return np.logaddexp(0.0, x)


def oracle_labels(window: np.ndarray, noise: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Six positive labels from a z-scored ``(H, W, 9)`` window (or a batch of them)."""
    w = np.asarray(window, dtype=np.float64)
    m = w.mean(axis=(-3, -2))
    s = w.std(axis=(-3, -2))
    wind = np.sqrt(m[..., _CH["u10"]] ** 2 + m[..., _CH["v10"]] ** 2 + 0.25)
    dry = 0.6 * m[..., _CH["gi_trendless"]] - 0.5 * m[..., _CH["dewpoint_trend"]] + 0.4 * m[..., _CH["net_solar_trend"]]
    heat = (0.5 * m[..., _CH["thermal_down_trend"]] + 0.3 * m[..., _CH["net_thermal_trend"]]
            - 0.3 * m[..., _CH["ozone_trend"]])
    z1 = 0.8 * wind + dry
    z2 = 0.6 * wind + heat + 0.3 * s[..., _CH["gi_trendless"]]
    labels = np.stack([
        8000.0 * np.exp(0.7 * z1),
        90.0 * np.exp(0.5 * z2 + 0.2 * z1),
        240.0 * np.exp(0.45 * z1 + 0.35 * z2),
        15.0 * _softplus(1.0 + z1 + 0.5 * z2),
        1.5 * _softplus(0.5 + 0.8 * z2),
        _softplus(z1 + z2 - 0.5),
    ], axis=-1)
    if noise > 0:
        if rng is None:
            raise ValueError("label noise needs a random generator")
        labels = labels * np.exp(noise * rng.standard_normal(labels.shape))
    return labels

# a planted hot spot drifts each trend variable in the direction that raises every label
_HOT_SIGN = {"d2m": -1, "ssr": 1, "str": 1, "strd": 1, "tco3": -1}


@dataclass(frozen=True)
class SynthConfig:
    lat0: float = 41.0
    lon0: float = -5.5
    rows: int = 72
    cols: int = 72
    spacing: float = 0.02
    window: int = 32
    coarse_spacing: float = 0.1
    utm_spacing: float = 1500.0
    year: int = 2010
    months: tuple[int, ...] = (6, 7, 8)
    n_event_dates: int = 6
    n_unlabelled: int = 600
    n_labelled: int = 300
    label_noise: float = 0.1
    corr_len: float = 3.0
    hotspot: tuple[float, float, float] | None = None  # (lat, lon, radius in degrees)

    def target_axes(self) -> tuple[np.ndarray, np.ndarray]:
        lat = self.lat0 + self.spacing * np.arange(self.rows)
        lon = self.lon0 + self.spacing * np.arange(self.cols)
        return lat, lon


@dataclass
class Scenario:
    config: SynthConfig
    seed: int
    raw: list[GeoGrid]
    unlabelled: list[tuple[float, float, date]]
    labelled: list[tuple[float, float, date]]
    labels: np.ndarray


def gi_dates(cfg: SynthConfig) -> list[date]:
    return [date(cfg.year, m, d) for m in cfg.months for d in (1, 11, 21)]


def _coarse_axes(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    lat, lon = cfg.target_axes()
    margin = 2 * cfg.coarse_spacing
    clat = np.arange(lat[0] - margin, lat[-1] + margin + 1e-9, cfg.coarse_spacing)
    clon = np.arange(lon[0] - margin, lon[-1] + margin + 1e-9, cfg.coarse_spacing)
    return clat, clon


def _utm_axes(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    lat, lon = cfg.target_axes()
    corners_lat = np.array([lat[0], lat[0], lat[-1], lat[-1]])
    corners_lon = np.array([lon[0], lon[-1], lon[0], lon[-1]])
    east, north = decimal_to_utm(corners_lat, corners_lon, 30, "N")
    margin = 4 * cfg.utm_spacing
    e = np.arange(east.min() - margin, east.max() + margin + 1, cfg.utm_spacing)
    n = np.arange(north.min() - margin, north.max() + margin + 1, cfg.utm_spacing)
    return n, e


def _hotspot_bump(cfg: SynthConfig, lat_axis, lon_axis) -> np.ndarray:
    if cfg.hotspot is None:
        return np.zeros((len(lat_axis), len(lon_axis)))
    hlat, hlon, radius = cfg.hotspot
    d2 = (np.asarray(lat_axis)[:, None] - hlat) ** 2 + (np.asarray(lon_axis)[None, :] - hlon) ** 2
    return np.exp(-0.5 * d2 / radius**2)


def generate(cfg: SynthConfig, seed: int) -> Scenario:
    """Build raw grids plus unlabelled and labelled sample points."""
    root = np.random.SeedSequence(seed)
    streams = iter(root.spawn(64))

    def rng():
        return np.random.default_rng(next(streams))

    clat, clon = _coarse_axes(cfg)
    north, east = _utm_axes(cfg)
    gdates = gi_dates(cfg)
    raw: list[GeoGrid] = []

    bump = _hotspot_bump(cfg, clat, clon)
    # trend group: one reading per greenness-index date, drifting by smooth increments
    for var in TREND_VARIABLES:
        offset, scale, tscale = _ATMOS[var]
        r = rng()
        level = smooth_noise((clat.size, clon.size), cfg.corr_len, r)
        push = 3 * _HOT_SIGN.get(var, 0) * bump
        for d in gdates:
            level = level + (tscale / scale) * (smooth_noise((clat.size, clon.size), cfg.corr_len, r) + push)
            raw.append(GeoGrid(var, offset + scale * level, clat, clon, datetime(d.year, d.month, d.day, 12)))

    # reflectance bands on the UTM grid
    r = rng()
    green_base = smooth_noise((north.size, east.size), cfg.corr_len * 6, r)
    for d in gdates:
        ts = datetime(d.year, d.month, d.day)
        green_base = green_base + 0.3 * smooth_noise((north.size, east.size), cfg.corr_len * 6, r)
        green = np.clip(0.25 + 0.06 * green_base, 0.01, None)
        red = np.clip(0.18 + 0.04 * smooth_noise((north.size, east.size), cfg.corr_len * 6, r), 0.01, None)
        blue = np.clip(0.12 + 0.03 * smooth_noise((north.size, east.size), cfg.corr_len * 6, r), 0.01, None)
        # a few dead pixels: all-zero reflectance, i.e. an undefined index
        dead = r.random(green.shape) < 0.002
        for arr in (green, red, blue):
            arr[dead] = 0.0
        for band, arr in (("red", red), ("green", green), ("blue", blue)):
            raw.append(GeoGrid(band, arr, north, east, ts, "1", "utm:30N"))

    # event dates: need two greenness dates before them
    first_ok = gdates[1]
    last = date(cfg.year, max(cfg.months), 28)
    span = (last - first_ok).days
    r = rng()
    offsets = np.sort(r.choice(np.arange(1, span + 1), size=cfg.n_event_dates, replace=False))
    events = [first_ok + timedelta(days=int(o)) for o in offsets]
    for k, d in enumerate(events):
        for var in ("u10", "v10"):
            offset, scale, _ = _ATMOS[var]
            field = offset + scale * smooth_noise((clat.size, clon.size), cfg.corr_len, r) + 3 * scale * bump
            hours = (18,) if k % 3 == 2 else (12, 18)
            for h in hours:
                jitter = 0.0 if h == 12 else 0.5 * scale
                raw.append(GeoGrid(var, field + jitter, clat, clon, datetime(d.year, d.month, d.day, h), "m s-1"))

    lat, lon = cfg.target_axes()
    half = cfg.window // 2
    if cfg.rows < cfg.window or cfg.cols < cfg.window:
        raise ValueError("synthetic region is smaller than one sample window")

    n_rows, n_cols = cfg.rows - cfg.window + 1, cfg.cols - cfg.window + 1

    def draw_points(n: int, gen: np.random.Generator, distinct: bool = False):
        if distinct:
            # one fire record per cell and day: identical inputs never carry two labels
            if n > n_rows * n_cols * len(events):
                raise ValueError("more labelled fires than distinct (cell, date) slots")
            flat = gen.choice(n_rows * n_cols * len(events), size=n, replace=False)
            rows, cols, days = np.unravel_index(flat, (n_rows, n_cols, len(events)))
            rows, cols = rows + half, cols + half
        else:
            rows = gen.integers(half, n_rows + half, n)
            cols = gen.integers(half, n_cols + half, n)
            days = gen.integers(0, len(events), n)
        jit = gen.uniform(-0.4, 0.4, (n, 2)) * cfg.spacing
        return [(float(lat[i] + j[0]), float(lon[c] + j[1]), events[k]) for i, c, k, j in zip(rows, cols, days, jit)]

    unlabelled = draw_points(cfg.n_unlabelled, rng())
    labelled = draw_points(cfg.n_labelled, rng(), distinct=True)
    store = harmonize(raw, lat, lon)
    stats = fit_input_stats(store, unlabelled + labelled, cfg.window)
    windows = build_sample_set(labelled, store, stats, cfg.window).tensors
    labels = oracle_labels(windows, cfg.label_noise, rng())
    return Scenario(cfg, seed, raw, unlabelled, labelled, labels)


def fit_input_stats(store: GridStore, points, window: int) -> NormalizationStats:
    """z-score statistics over every sample window of every subset."""
    raw = build_sample_set(points, store, None, window)
    mean, std = zscore_fit([raw.tensors])
    return NormalizationStats(mean, std)


def _write_points(path: Path, points, labels: np.ndarray | None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# synthetic sample points\n")
        writer = csv.writer(fh)
        writer.writerow(["id", "lat", "lon", "date", *(LABELS if labels is not None else ())])
        for i, (la, lo, d) in enumerate(points):
            row = [i, repr(la), repr(lo), d.isoformat()]
            if labels is not None:
                row += [repr(float(v)) for v in labels[i]]
            writer.writerow(row)


def write_scenario(scenario: Scenario, out_dir: str | Path) -> Path:
    """Write raw grid files, a manifest and the sample-point CSVs; return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for g in scenario.raw:
        rel = f"grids/{g.variable_id}_{g.timestamp.strftime('%Y%m%dT%H')}.grid"
        write_grid(out_dir / rel, g)
        entries.append((rel, g))
    _write_points(out_dir / "unlabelled.csv", scenario.unlabelled, None)
    _write_points(out_dir / "fires.csv", scenario.labelled, scenario.labels)
    cfg = scenario.config
    lat, lon = cfg.target_axes()
    manifest = out_dir / "manifest.json"
    write_manifest(
        manifest, entries, kind="raw", synthetic=True, seed=scenario.seed,
        generator=asdict(cfg),
        target_grid={"lat": [float(v) for v in lat], "lon": [float(v) for v in lon]},
        window=cfg.window,
        points={"unlabelled": "unlabelled.csv", "labelled": "fires.csv"},
    )
    return manifest


def ingest(raw_manifest: str | Path, out_dir: str | Path) -> dict[str, Path]:
    """Harmonise raw grids, fit input statistics and fuse both sample sets."""
    from .geodata.fusion import read_points
    from .geodata.grids import read_manifest

    raw_manifest = Path(raw_manifest)
    doc, grids = read_manifest(raw_manifest)
    lat = np.array(doc["target_grid"]["lat"])
    lon = np.array(doc["target_grid"]["lon"])
    window = int(doc["window"])
    unl, _ = read_points(raw_manifest.parent / doc["points"]["unlabelled"])
    lab, labels = read_points(raw_manifest.parent / doc["points"]["labelled"])
    meta = {"synthetic": bool(doc.get("synthetic", False)), "seed": doc.get("seed"), "window": window}
    store = harmonize(grids, lat, lon, meta)
    stats = fit_input_stats(store, unl + lab, window)
    out_dir = Path(out_dir)
    manifest = store.save(out_dir)
    stats.save(out_dir / "stats.json")
    build_sample_set(unl, store, stats, window, meta=meta).save(out_dir / "unlabelled.samples")
    build_sample_set(lab, store, stats, window, labels, meta=meta).save(out_dir / "labelled.samples")
    return {"manifest": manifest, "stats": out_dir / "stats.json",
            "unlabelled": out_dir / "unlabelled.samples", "labelled": out_dir / "labelled.samples"}


def load_samples(store_dir: str | Path) -> tuple[SampleSet, SampleSet, NormalizationStats]:
    store_dir = Path(store_dir)
    return (SampleSet.load(store_dir / "unlabelled.samples"), SampleSet.load(store_dir / "labelled.samples"),
            NormalizationStats.load(store_dir / "stats.json"))
