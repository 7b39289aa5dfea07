from datetime import date, datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import RegularGridInterpolator

from wam.geodata import (
    CHANNEL_ORDER,
    CoverageError,
    GeoGrid,
    GridStore,
    MissingDataError,
    NormalizationStats,
    decimal_to_utm,
    fuse_sample,
    greenness_index,
    minmax_apply,
    minmax_fit,
    minmax_invert,
    read_grid,
    resample_bilinear,
    select_daily_reading,
    trend_diff,
    utm_to_decimal,
    write_grid,
    zscore_apply,
    zscore_fit,
)
from wam.geodata.fusion import FrameViolation, read_points
from wam.geodata.resample import bilinear_points
from wam.geodata.variables import DAILY_VARIABLES, TREND_VARIABLES, channel_fingerprint

pyproj = pytest.importorskip("pyproj")

# (easting, northing, zone, hemisphere) spread over zones, hemispheres and latitudes
UTM_REFERENCE = [
    (500000.0, 4649776.22, 30, "N"),
    (255000.0, 4540000.0, 30, "N"),
    (720000.0, 4180000.0, 30, "N"),
    (320000.0, 4750000.0, 29, "N"),
    (612345.6, 4429876.5, 31, "N"),
    (166021.44, 1000.0, 33, "N"),
    (833978.56, 9000000.0, 12, "N"),
    (400000.0, 6200000.0, 55, "S"),
    (500000.0, 8000000.0, 19, "S"),
    (700000.0, 3500000.0, 60, "N"),
]


def _grid(values, lat=None, lon=None, var="u10", ts=datetime(2010, 7, 1, 12), crs="decimal"):
    values = np.asarray(values, dtype=float)
    lat = np.arange(values.shape[0], dtype=float) if lat is None else np.asarray(lat, float)
    lon = np.arange(values.shape[1], dtype=float) if lon is None else np.asarray(lon, float)
    return GeoGrid(var, values, lat, lon, ts, "1", crs)


# --- UTM ---------------------------------------------------------------------

def test_utm_central_meridian_on_equator():
    lat, lon = utm_to_decimal(500000.0, 0.0, 30, "N")
    assert abs(lat) < 1e-12
    assert abs(lon + 3.0) < 1e-12


@pytest.mark.parametrize("east,north,zone,hemi", UTM_REFERENCE)
def test_utm_inverse_matches_pyproj(east, north, zone, hemi):
    crs = f"+proj=utm +zone={zone} +datum=WGS84" + (" +south" if hemi == "S" else "")
    oracle = pyproj.Transformer.from_crs(crs, "EPSG:4326", always_xy=True)
    lon_o, lat_o = oracle.transform(east, north)
    lat, lon = utm_to_decimal(east, north, zone, hemi)
    assert abs(lat - lat_o) < 1e-6
    assert abs(lon - lon_o) < 1e-6


@pytest.mark.parametrize("east,north,zone,hemi", UTM_REFERENCE)
def test_utm_round_trip_millimetre(east, north, zone, hemi):
    lat, lon = utm_to_decimal(east, north, zone, hemi)
    e2, n2 = decimal_to_utm(lat, lon, zone, hemi)
    assert abs(e2 - east) < 1e-3
    assert abs(n2 - north) < 1e-3


def test_utm_vectorised_matches_scalar():
    e = np.array([p[0] for p in UTM_REFERENCE[:5]])
    n = np.array([p[1] for p in UTM_REFERENCE[:5]])
    lat, lon = utm_to_decimal(e, n, 30)
    for i in range(5):
        la, lo = utm_to_decimal(e[i], n[i], 30)
        assert lat[i] == la and lon[i] == lo


@pytest.mark.parametrize("args", [(500000.0, 0.0, 0), (500000.0, 0.0, 61), (0.0, 10.0, 30), (5e5, -1.0, 30)])
def test_utm_rejects_invalid_input(args):
    with pytest.raises(ValueError):
        utm_to_decimal(*args)


# --- resampling --------------------------------------------------------------

def test_resample_identity():
    rng = np.random.default_rng(0)
    g = _grid(rng.standard_normal((6, 7)), np.linspace(40, 41, 6), np.linspace(-5, -4, 7))
    out = resample_bilinear(g, g.lat_axis, g.lon_axis)
    np.testing.assert_array_equal(out.values, g.values)


def test_resample_constant_field():
    g = _grid(np.full((5, 5), 3.25), np.linspace(40, 41, 5), np.linspace(-5, -4, 5))
    out = resample_bilinear(g, np.linspace(40.1, 40.9, 9), np.linspace(-4.95, -4.05, 11))
    np.testing.assert_allclose(out.values, 3.25, rtol=0, atol=1e-12)


def test_resample_linear_field_exact():
    lat = np.linspace(39.0, 42.0, 13)
    lon = np.linspace(-7.0, -3.0, 17)
    f = lambda la, lo: 2.5 * la - 1.75 * lo + 0.3  # noqa: E731
    g = _grid(f(lat[:, None], lon[None, :]), lat, lon)
    rng = np.random.default_rng(3)
    tl = np.sort(rng.uniform(39.0, 42.0, 23))
    tn = np.sort(rng.uniform(-7.0, -3.0, 19))
    out = resample_bilinear(g, tl, tn)
    np.testing.assert_allclose(out.values, f(tl[:, None], tn[None, :]), rtol=0, atol=1e-6)


def test_resample_agrees_with_scipy_oracle():
    rng = np.random.default_rng(4)
    lat = np.linspace(40, 42, 9)
    lon = np.linspace(-6, -3, 11)
    vals = rng.standard_normal((9, 11))
    g = _grid(vals, lat, lon)
    tl, tn = np.linspace(40.05, 41.95, 14), np.linspace(-5.9, -3.1, 12)
    oracle = RegularGridInterpolator((lat, lon), vals, method="linear")
    pts = np.stack(np.meshgrid(tl, tn, indexing="ij"), axis=-1)
    np.testing.assert_allclose(resample_bilinear(g, tl, tn).values, oracle(pts), rtol=0, atol=1e-12)


def test_resample_descending_axis():
    lat = np.linspace(42, 40, 5)  # north to south
    lon = np.linspace(-6, -4, 5)
    vals = lat[:, None] + 0 * lon
    out = resample_bilinear(_grid(vals, lat, lon), np.array([40.5, 41.5]), lon)
    np.testing.assert_allclose(out.values[:, 0], [40.5, 41.5], atol=1e-12)


def test_resample_refuses_to_extrapolate():
    g = _grid(np.zeros((4, 4)), np.linspace(40, 41, 4), np.linspace(-5, -4, 4))
    with pytest.raises(CoverageError):
        resample_bilinear(g, np.array([39.9, 40.5]), np.array([-4.5]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_resample_is_convex(seed):
    rng = np.random.default_rng(seed)
    vals = rng.uniform(-10, 10, (6, 6))
    lat, lon = np.arange(6.0), np.arange(6.0)
    rows, cols = rng.uniform(0, 5, 40), rng.uniform(0, 5, 40)
    out = bilinear_points(vals, lat, lon, rows, cols)
    for v, r, c in zip(out, rows, cols):
        r0, c0 = int(min(r, 4)), int(min(c, 4))
        cell = vals[r0:r0 + 2, c0:c0 + 2]
        assert cell.min() - 1e-12 <= v <= cell.max() + 1e-12


# --- greenness index ---------------------------------------------------------

@pytest.mark.parametrize("g,b,r,expected", [(1, 1, 1, 0.0), (1, 0, 0, 1.0), (0, 1, 1, -1.0)])
def test_greenness_examples(g, b, r, expected):
    mk = lambda v, name: _grid(np.full((2, 2), float(v)), var=name, crs="utm:30N")  # noqa: E731
    out = greenness_index(mk(r, "red"), mk(g, "green"), mk(b, "blue"))
    np.testing.assert_allclose(out.values, expected)
    assert out.variable_id == "gi"


def test_greenness_undefined_and_bounded():
    rng = np.random.default_rng(5)
    red, green, blue = (rng.uniform(0, 1, (8, 8)) for _ in range(3))
    red[0, 0] = green[0, 0] = blue[0, 0] = 0.0
    out = greenness_index(_grid(red, var="red"), _grid(green, var="green"), _grid(blue, var="blue")).values
    assert np.isnan(out[0, 0])
    defined = out[np.isfinite(out)]
    assert defined.size == 63
    assert np.all((defined >= -1) & (defined <= 1))


# --- daily selection and trends ---------------------------------------------

def test_daily_prefers_noon():
    a = _grid(np.ones((2, 2)), ts=datetime(2010, 7, 1, 12))
    b = _grid(np.full((2, 2), 2.0), ts=datetime(2010, 7, 1, 18))
    assert select_daily_reading({12: a, 18: b}) is a


def test_daily_falls_back_to_evening():
    b = _grid(np.full((2, 2), 2.0), ts=datetime(2010, 7, 1, 18))
    assert select_daily_reading({18: b}) is b


def test_daily_empty_is_error():
    with pytest.raises(MissingDataError):
        select_daily_reading({}, "u10", date(2010, 7, 1))


def test_trend_scalar_difference():
    s = [(date(2010, 6, 1), _grid(np.full((3, 3), 5.0), var="d2m")),
         (date(2010, 6, 11), _grid(np.full((3, 3), 7.0), var="d2m"))]
    np.testing.assert_array_equal(trend_diff(s, date(2010, 6, 15)).values, 2.0)


def test_trend_identical_grids_give_zero():
    v = np.random.default_rng(0).standard_normal((3, 3))
    s = [(date(2010, 6, 1), _grid(v, var="d2m")), (date(2010, 6, 11), _grid(v, var="d2m"))]
    np.testing.assert_array_equal(trend_diff(s, date(2010, 6, 20)).values, 0.0)


def test_trend_linear_in_time():
    slope = np.random.default_rng(1).standard_normal((4, 4))
    days = [date(2010, 6, 1), date(2010, 6, 11), date(2010, 6, 21)]
    s = [(d, _grid(slope * (d - days[0]).days, var="ssr")) for d in days]
    # uses the two most recent dates on or before the sample date
    np.testing.assert_allclose(trend_diff(s, date(2010, 6, 25)).values, slope * 10, atol=1e-12)
    np.testing.assert_allclose(trend_diff(s, date(2010, 6, 12)).values, slope * 10, atol=1e-12)


def test_trend_needs_two_dates():
    s = [(date(2010, 6, 11), _grid(np.zeros((2, 2)), var="ssr"))]
    with pytest.raises(MissingDataError):
        trend_diff(s, date(2010, 6, 20))


# --- normalisation -----------------------------------------------------------

def test_zscore_analytic():
    mean, std = zscore_fit([np.array([1.0, 2.0, 3.0])[:, None]], ("x",))
    np.testing.assert_allclose(zscore_apply(np.array([1.0, 2.0, 3.0])[:, None], mean, std)[:, 0],
                               [-1.2247, 0.0, 1.2247], atol=1e-4)


def test_zscore_chunked_equals_whole():
    x = np.random.default_rng(2).normal(3, 2, (1000, 9))
    m1, s1 = zscore_fit([x])
    m2, s2 = zscore_fit([x[:300], x[300:700], x[700:]])
    np.testing.assert_allclose(m1, m2, rtol=1e-12)
    np.testing.assert_allclose(s1, s2, rtol=1e-12)


def test_zscore_zero_variance_names_channel():
    x = np.random.default_rng(0).standard_normal((20, 9))
    x[:, 4] = 1.0
    with pytest.raises(ValueError, match=CHANNEL_ORDER[4]):
        zscore_fit([x])


def test_minmax_example():
    lo, hi = minmax_fit(np.array([[0.0], [50.0], [100.0]]), ("y",))
    np.testing.assert_allclose(minmax_apply(np.array([0.0, 50.0, 100.0])[:, None], lo, hi)[:, 0], [0, 0.5, 1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_minmax_round_trip(seed):
    y = np.random.default_rng(seed).uniform(-1e3, 1e4, (20, 6))
    lo, hi = minmax_fit(y)
    np.testing.assert_allclose(minmax_invert(minmax_apply(y, lo, hi), lo, hi), y, rtol=0, atol=1e-6 * np.abs(y).max())


def test_stats_serialisation_and_fingerprint(tmp_path):
    stats = NormalizationStats(np.arange(9.0), np.ones(9) * 2, np.zeros(6), np.ones(6))
    stats.save(tmp_path / "stats.json")
    back = NormalizationStats.load(tmp_path / "stats.json")
    np.testing.assert_array_equal(back.channel_mean, stats.channel_mean)
    assert back.channel_order == CHANNEL_ORDER
    assert back.fingerprint == stats.fingerprint == channel_fingerprint(CHANNEL_ORDER)


def test_stats_reject_permuted_channels(tmp_path):
    stats = NormalizationStats(np.zeros(9), np.ones(9))
    doc = stats.to_dict()
    doc["channel_order"] = list(reversed(doc["channel_order"]))
    with pytest.raises(ValueError):
        NormalizationStats.from_dict(doc)


# --- grid files --------------------------------------------------------------

def test_grid_file_round_trip(tmp_path):
    g = _grid(np.random.default_rng(0).standard_normal((3, 4)), [40.0, 40.1, 40.2], [-5.0, -4.9, -4.8, -4.7],
              var="d2m", ts=datetime(2010, 7, 11, 12))
    write_grid(tmp_path / "g.grid", g)
    back = read_grid(tmp_path / "g.grid")
    np.testing.assert_array_equal(back.values, g.values)
    np.testing.assert_array_equal(back.lat_axis, g.lat_axis)
    assert (back.variable_id, back.timestamp, back.crs) == (g.variable_id, g.timestamp, g.crs)


# --- fusion ------------------------------------------------------------------

def _constant_store(n=40, value=2.0):
    lat = 40 + 0.01 * np.arange(n)
    lon = -5 + 0.01 * np.arange(n)
    day = date(2010, 7, 15)
    grids = []
    for var in DAILY_VARIABLES:
        grids.append(GeoGrid(var, np.full((n, n), value), lat, lon, datetime(2010, 7, 15, 12)))
    for d in (date(2010, 7, 1), date(2010, 7, 11)):
        grids.append(GeoGrid("gi", np.full((n, n), 0.25), lat, lon, datetime(d.year, d.month, d.day)))
        for var in TREND_VARIABLES:
            grids.append(GeoGrid(var, np.full((n, n), value) * d.day, lat, lon, datetime(d.year, d.month, d.day, 12)))
    return GridStore.from_grids(grids), day


def test_fuse_constant_fields_give_zero_tensor():
    store, day = _constant_store()
    raw = store.channel_stack(day)
    stats = NormalizationStats(raw.reshape(-1, 9).mean(axis=0), np.ones(9))
    s = fuse_sample((float(store.lat_axis[20]), float(store.lon_axis[20])), day, store, stats, window=16)
    assert s.tensor.shape == (16, 16, 9)
    assert s.tensor.dtype == np.float32
    np.testing.assert_array_equal(s.tensor, 0.0)


def test_fuse_center_cell_convention():
    store, day = _constant_store()
    stack = store.channel_stack(day).copy()
    stack[17, 23, 0] = 99.0
    store._stacks[day] = stack
    s = fuse_sample((float(store.lat_axis[17]), float(store.lon_axis[23])), day, store, None, window=16)
    assert s.tensor[8, 8, 0] == 99.0


def test_fuse_window_outside_coverage():
    store, day = _constant_store()
    with pytest.raises(FrameViolation):
        fuse_sample((float(store.lat_axis[3]), float(store.lon_axis[20])), day, store, None, window=16)


def test_store_round_trip_preserves_channels(tmp_path):
    store, day = _constant_store(n=12)
    manifest = store.save(tmp_path / "store")
    back = GridStore.load(manifest)
    np.testing.assert_array_equal(back.channel_stack(day), store.channel_stack(day))
    assert back.sample_dates() == store.sample_dates() == [day]


def test_read_points_skips_comments(tmp_path):
    p = tmp_path / "pts.csv"
    p.write_text("# comment\nid,lat,lon,date\n0,40.5,-4.5,2010-07-15\n")
    pts, labels = read_points(p)
    assert pts == [(40.5, -4.5, date(2010, 7, 15))]
    assert labels is None
