"""Georeferenced grid ingestion, harmonisation and sample fusion."""
from .fusion import (
    FrameViolation,
    FusedSample,
    GridStore,
    MissingDataError,
    SampleSet,
    build_sample_set,
    fuse_sample,
    greenness_index,
    harmonize,
    latest_at,
    read_points,
    select_daily_reading,
    to_decimal_grid,
    trend_diff,
)
from .grids import DECIMAL, GeoGrid, GridFormatError, read_grid, read_manifest, write_grid, write_manifest
from .normalize import NormalizationStats, minmax_apply, minmax_fit, minmax_invert, zscore_apply, zscore_fit
from .resample import CoverageError, bilinear_points, resample_bilinear
from .utm import decimal_to_utm, utm_to_decimal
from .variables import CHANNEL_ORDER, LABELS, N_CHANNELS, N_LABELS, VARIABLE_SPECS, VariableSpec

__all__ = [
    "CHANNEL_ORDER", "CoverageError", "DECIMAL", "FrameViolation", "FusedSample", "GeoGrid", "GridFormatError",
    "GridStore", "LABELS", "MissingDataError", "NormalizationStats", "N_CHANNELS", "N_LABELS", "SampleSet",
    "VARIABLE_SPECS", "VariableSpec", "bilinear_points", "build_sample_set", "decimal_to_utm", "fuse_sample",
    "greenness_index", "harmonize", "latest_at", "minmax_apply", "minmax_fit", "minmax_invert", "read_grid",
    "read_manifest", "read_points", "resample_bilinear", "select_daily_reading", "to_decimal_grid",
    "trend_diff", "utm_to_decimal", "write_grid", "write_manifest", "zscore_apply", "zscore_fit",
]
