"""UTM <-> geographic coordinates on the WGS-84 ellipsoid.

Uses the Krueger series to sixth order in the third flattening, which is
accurate to well under a millimetre inside a zone. Functions are vectorised
over numpy arrays.
"""
from __future__ import annotations

import numpy as np

WGS84_A = 6378137.0
WGS84_F = 1 / 298.257223563
K0 = 0.9996
FALSE_EASTING = 500_000.0
FALSE_NORTHING_SOUTH = 10_000_000.0

_N = WGS84_F / (2 - WGS84_F)
_E = np.sqrt(WGS84_F * (2 - WGS84_F))
_RECT = WGS84_A / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)


def _series(coeffs: list[list[float]]) -> np.ndarray:
    # coeffs[j] holds the polynomial in n (powers 1..6) for harmonic j+1
    powers = np.array([_N**p for p in range(1, 7)])
    return np.array([np.dot(c, powers) for c in coeffs])


_ALPHA = _series([
    [1 / 2, -2 / 3, 5 / 16, 41 / 180, -127 / 288, 7891 / 37800],
    [0, 13 / 48, -3 / 5, 557 / 1440, 281 / 630, -1983433 / 1935360],
    [0, 0, 61 / 240, -103 / 140, 15061 / 26880, 167603 / 181440],
    [0, 0, 0, 49561 / 161280, -179 / 168, 6601661 / 7257600],
    [0, 0, 0, 0, 34729 / 80640, -3418889 / 1995840],
    [0, 0, 0, 0, 0, 212378941 / 319334400],
])
_BETA = _series([
    [1 / 2, -2 / 3, 37 / 96, -1 / 360, -81 / 512, 96199 / 604800],
    [0, 1 / 48, 1 / 15, -437 / 1440, 46 / 105, -1118711 / 3870720],
    [0, 0, 17 / 480, -37 / 840, -209 / 4480, 5569 / 90720],
    [0, 0, 0, 4397 / 161280, -11 / 504, -830251 / 7257600],
    [0, 0, 0, 0, 4583 / 161280, -108847 / 3991680],
    [0, 0, 0, 0, 0, 20648693 / 638668800],
])
_J2 = 2 * np.arange(1, 7)


def central_meridian(zone: int) -> float:
    return (zone - 1) * 6 - 180 + 3


def _check_zone(zone: int, hemisphere: str) -> None:
    if not isinstance(zone, (int, np.integer)) or not 1 <= zone <= 60:
        raise ValueError(f"UTM zone must be an integer in 1..60, got {zone!r}")
    if hemisphere not in ("N", "S"):
        raise ValueError(f"hemisphere must be 'N' or 'S', got {hemisphere!r}")


def utm_to_decimal(easting, northing, zone: int, hemisphere: str = "N"):
    """Inverse projection: UTM metres to (lat, lon) in decimal degrees."""
    _check_zone(zone, hemisphere)
    easting = np.asarray(easting, dtype=np.float64)
    northing = np.asarray(northing, dtype=np.float64)
    if np.any((easting <= 0) | (easting >= 1_000_000)) or np.any((northing < 0) | (northing > 10_000_000)):
        raise ValueError("easting/northing outside the valid UTM range")
    y = northing - (FALSE_NORTHING_SOUTH if hemisphere == "S" else 0.0)
    xi = y / (K0 * _RECT)
    eta = (easting - FALSE_EASTING) / (K0 * _RECT)
    xi, eta = np.broadcast_arrays(xi, eta)
    shape = xi.shape
    harm_xi = np.multiply.outer(_J2, xi.reshape(-1))
    harm_eta = np.multiply.outer(_J2, eta.reshape(-1))
    xi_p = xi - np.sum(_BETA[:, None] * np.sin(harm_xi) * np.cosh(harm_eta), axis=0).reshape(shape)
    eta_p = eta - np.sum(_BETA[:, None] * np.cos(harm_xi) * np.sinh(harm_eta), axis=0).reshape(shape)
    tau_p = np.sin(xi_p) / np.sqrt(np.sinh(eta_p) ** 2 + np.cos(xi_p) ** 2)
    lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))
    tau = _tau_from_conformal(tau_p)
    lat = np.degrees(np.arctan(tau))
    lon = central_meridian(zone) + np.degrees(lam)
    return lat, lon


def _conformal_tau(tau):
    sigma = np.sinh(_E * np.arctanh(_E * tau / np.sqrt(1 + tau * tau)))
    return tau * np.sqrt(1 + sigma * sigma) - sigma * np.sqrt(1 + tau * tau)


def _tau_from_conformal(tau_p):
    tau = np.array(tau_p, dtype=np.float64)
    e2m = 1 - _E**2
    for _ in range(5):
        tp = _conformal_tau(tau)
        slope = e2m * np.sqrt(1 + tp * tp) * np.sqrt(1 + tau * tau) / (1 + e2m * tau * tau)
        tau = tau + (tau_p - tp) / slope
    return tau


def decimal_to_utm(lat, lon, zone: int, hemisphere: str = "N"):
    """Forward projection into a given zone: (lat, lon) degrees to (easting, northing) metres."""
    _check_zone(zone, hemisphere)
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
        raise ValueError("latitude/longitude outside [-90, 90] x [-180, 180]")
    phi = np.radians(lat)
    lam = np.radians(lon - central_meridian(zone))
    tau_p = _conformal_tau(np.tan(phi))
    xi_p = np.arctan2(tau_p, np.cos(lam))
    eta_p = np.arcsinh(np.sin(lam) / np.sqrt(tau_p * tau_p + np.cos(lam) ** 2))
    shape = xi_p.shape
    harm_xi = np.multiply.outer(_J2, xi_p.reshape(-1))
    harm_eta = np.multiply.outer(_J2, eta_p.reshape(-1))
    xi = xi_p + np.sum(_ALPHA[:, None] * np.sin(harm_xi) * np.cosh(harm_eta), axis=0).reshape(shape)
    eta = eta_p + np.sum(_ALPHA[:, None] * np.cos(harm_xi) * np.sinh(harm_eta), axis=0).reshape(shape)
    easting = FALSE_EASTING + K0 * _RECT * eta
    northing = K0 * _RECT * xi + (FALSE_NORTHING_SOUTH if hemisphere == "S" else 0.0)
    return easting, northing
