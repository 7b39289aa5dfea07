"""The nine input channels and how each one is derived from raw readings."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

DAILY = "daily"
TREND = "trend"


@dataclass(frozen=True)
class VariableSpec:
    variable_id: str
    channel: str
    group: str
    units: str
    preferred_hours: tuple[int, ...] = ()


# Fixed channel order; stored in every checkpoint and stats file.
VARIABLE_SPECS: tuple[VariableSpec, ...] = (
    VariableSpec("u10", "u10", DAILY, "m s-1", (12, 18)),
    VariableSpec("v10", "v10", DAILY, "m s-1", (12, 18)),
    VariableSpec("gi", "gi_trendless", TREND, "1"),
    VariableSpec("d2m", "dewpoint_trend", TREND, "K"),
    VariableSpec("ssr", "net_solar_trend", TREND, "J m-2"),
    VariableSpec("str", "net_thermal_trend", TREND, "J m-2"),
    VariableSpec("strd", "thermal_down_trend", TREND, "J m-2"),
    VariableSpec("ssrd", "solar_down_trend", TREND, "J m-2"),
    VariableSpec("tco3", "ozone_trend", TREND, "kg m-2"),
)

CHANNEL_ORDER: tuple[str, ...] = tuple(v.channel for v in VARIABLE_SPECS)
N_CHANNELS = len(VARIABLE_SPECS)
DAILY_VARIABLES = tuple(v.variable_id for v in VARIABLE_SPECS if v.group == DAILY)
# atmospheric trend variables: differenced between greenness-index dates
TREND_VARIABLES = tuple(v.variable_id for v in VARIABLE_SPECS if v.group == TREND and v.variable_id != "gi")
REFLECTANCE_BANDS = ("red", "green", "blue")

LABELS: tuple[str, ...] = (
    "burnt_area_m",
    "control_time_min",
    "extinction_time_min",
    "human_units",
    "heavy_units",
    "aerial_units",
)
N_LABELS = len(LABELS)


def spec_for(variable_id: str) -> VariableSpec:
    for spec in VARIABLE_SPECS:
        if spec.variable_id == variable_id:
            return spec
    raise KeyError(f"unknown variable {variable_id!r}")


def channel_fingerprint(order: tuple[str, ...] = CHANNEL_ORDER) -> str:
    return hashlib.sha256(",".join(order).encode()).hexdigest()[:16]
