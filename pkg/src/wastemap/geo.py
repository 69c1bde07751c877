"""Coordinate handling: affine transforms, WGS84/UTM conversion, geodesic area.

UTM conversion uses the usual truncated transverse-Mercator series on the
WGS84 ellipsoid (sub-millimeter accuracy for in-zone coordinates, far below
the one-pixel tolerance the tiling layer needs). Formulas follow the classic
Snyder/Karney expansion as popularized by the Turbo87 utm package.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from wastemap.errors import GeometryError

EPSG_WGS84 = 4326

K0 = 0.9996
E = 0.00669438
E2 = E * E
E3 = E2 * E
E_P2 = E / (1.0 - E)

SQRT_E = math.sqrt(1 - E)
_E = (1 - SQRT_E) / (1 + SQRT_E)
_E2 = _E * _E
_E3 = _E2 * _E
_E4 = _E3 * _E
_E5 = _E4 * _E

M1 = 1 - E / 4 - 3 * E2 / 64 - 5 * E3 / 256
M2 = 3 * E / 8 + 3 * E2 / 32 + 45 * E3 / 1024
M3 = 15 * E2 / 256 + 45 * E3 / 1024
M4 = 35 * E3 / 3072

P2 = 3.0 / 2 * _E - 27.0 / 32 * _E3 + 269.0 / 512 * _E5
P3 = 21.0 / 16 * _E2 - 55.0 / 32 * _E4
P4 = 151.0 / 96 * _E3 - 417.0 / 128 * _E5
P5 = 1097.0 / 512 * _E4

R = 6378137.0

MEAN_EARTH_RADIUS_M = 6371008.8


class Affine(NamedTuple):
    """GDAL-style affine map from pixel (col, row) to CRS (x, y).

    x = a*col + b*row + c ; y = d*col + e*row + f
    """

    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    def apply(self, col, row):
        return (
            self.a * col + self.b * row + self.c,
            self.d * col + self.e * row + self.f,
        )

    def invert(self, x, y):
        det = self.a * self.e - self.b * self.d
        if det == 0:
            raise GeometryError("affine transform is singular")
        col = (self.e * (x - self.c) - self.b * (y - self.f)) / det
        row = (-self.d * (x - self.c) + self.a * (y - self.f)) / det
        return col, row

    @property
    def is_axis_aligned(self) -> bool:
        return self.b == 0.0 and self.d == 0.0

    @classmethod
    def north_up(cls, x0: float, y0: float, px: float) -> "Affine":
        """Square-pixel north-up transform anchored at the raster's top-left."""
        return cls(px, 0.0, x0, 0.0, -px, y0)


def zone_number(lon: float) -> int:
    """UTM zone containing a longitude (special grid exceptions ignored)."""
    z = int((lon + 180.0) / 6.0) + 1
    return min(max(z, 1), 60)


def utm_epsg(lon: float, lat: float) -> int:
    """EPSG code of the WGS84 UTM zone containing a lon/lat point."""
    z = zone_number(lon)
    return (32600 if lat >= 0 else 32700) + z


def epsg_to_zone(epsg: int) -> tuple[int, bool]:
    """(zone number, northern hemisphere) for a UTM EPSG code."""
    if 32601 <= epsg <= 32660:
        return epsg - 32600, True
    if 32701 <= epsg <= 32760:
        return epsg - 32700, False
    raise GeometryError(f"EPSG:{epsg} is not a WGS84 UTM code")


def is_utm(epsg: int) -> bool:
    return 32601 <= epsg <= 32660 or 32701 <= epsg <= 32760


def is_geographic(epsg: int) -> bool:
    return epsg == EPSG_WGS84


def is_metric(epsg: int) -> bool:
    """True when the CRS unit is the meter. Only UTM zones are recognized."""
    return is_utm(epsg)


def crs_name(epsg: int) -> str:
    if epsg == EPSG_WGS84:
        return "WGS 84"
    if is_utm(epsg):
        zone, north = epsg_to_zone(epsg)
        return f"WGS 84 / UTM zone {zone}{'N' if north else 'S'}"
    return f"EPSG:{epsg}"


def _central_longitude(zone: int) -> float:
    return (zone - 1) * 6.0 - 180.0 + 3.0


def lonlat_to_utm(lon, lat, epsg: int):
    """Project lon/lat arrays (degrees) into a UTM zone. Returns (easting, northing)."""
    zone, northern = epsg_to_zone(epsg)
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    if np.any(np.abs(lat) > 84.0):
        raise GeometryError("latitude outside UTM validity range (84S..84N)")

    lat_rad = np.radians(lat)
    lat_sin = np.sin(lat_rad)
    lat_cos = np.cos(lat_rad)
    lat_tan = lat_sin / lat_cos
    lat_tan2 = lat_tan * lat_tan
    lat_tan4 = lat_tan2 * lat_tan2

    lon_rad = np.radians(lon)
    central_rad = math.radians(_central_longitude(zone))

    n = R / np.sqrt(1 - E * lat_sin**2)
    c = E_P2 * lat_cos**2

    a = lat_cos * (lon_rad - central_rad)
    a2 = a * a
    a3 = a2 * a
    a4 = a3 * a
    a5 = a4 * a
    a6 = a5 * a

    m = R * (
        M1 * lat_rad
        - M2 * np.sin(2 * lat_rad)
        + M3 * np.sin(4 * lat_rad)
        - M4 * np.sin(6 * lat_rad)
    )

    easting = (
        K0
        * n
        * (
            a
            + a3 / 6 * (1 - lat_tan2 + c)
            + a5 / 120 * (5 - 18 * lat_tan2 + lat_tan4 + 72 * c - 58 * E_P2)
        )
        + 500000.0
    )
    northing = K0 * (
        m
        + n
        * lat_tan
        * (
            a2 / 2
            + a4 / 24 * (5 - lat_tan2 + 9 * c + 4 * c**2)
            + a6 / 720 * (61 - 58 * lat_tan2 + lat_tan4 + 600 * c - 330 * E_P2)
        )
    )
    if not northern:
        northing = northing + 10000000.0
    return easting, northing


def utm_to_lonlat(easting, northing, epsg: int):
    """Inverse UTM projection. Returns (lon, lat) in degrees."""
    zone, northern = epsg_to_zone(epsg)
    x = np.asarray(easting, dtype=np.float64) - 500000.0
    y = np.asarray(northing, dtype=np.float64)
    if not northern:
        y = y - 10000000.0

    m = y / K0
    mu = m / (R * M1)

    p_rad = (
        mu
        + P2 * np.sin(2 * mu)
        + P3 * np.sin(4 * mu)
        + P4 * np.sin(6 * mu)
        + P5 * np.sin(8 * mu)
    )

    p_sin = np.sin(p_rad)
    p_sin2 = p_sin * p_sin
    p_cos = np.cos(p_rad)
    p_tan = p_sin / p_cos
    p_tan2 = p_tan * p_tan
    p_tan4 = p_tan2 * p_tan2

    ep_sin = 1 - E * p_sin2
    ep_sin_sqrt = np.sqrt(ep_sin)

    n = R / ep_sin_sqrt
    r = (1 - E) / ep_sin

    c = E_P2 * p_cos**2
    c2 = c * c

    d = x / (n * K0)
    d2 = d * d
    d3 = d2 * d
    d4 = d3 * d
    d5 = d4 * d
    d6 = d5 * d

    lat = p_rad - (p_tan / r) * (
        d2 / 2
        - d4 / 24 * (5 + 3 * p_tan2 + 10 * c - 4 * c2 - 9 * E_P2)
        + d6 / 720 * (61 + 90 * p_tan2 + 298 * c + 45 * p_tan4 - 252 * E_P2 - 3 * c2)
    )
    lon = (
        d
        - d3 / 6 * (1 + 2 * p_tan2 + c)
        + d5 / 120 * (5 - 2 * c + 28 * p_tan2 - 3 * c2 + 8 * E_P2 + 24 * p_tan4)
    ) / p_cos

    return (
        np.degrees(lon) + _central_longitude(zone),
        np.degrees(lat),
    )


def transform_points(x, y, src_epsg: int, dst_epsg: int):
    """Transform coordinate arrays between supported CRSs (WGS84 and UTM zones)."""
    if src_epsg == dst_epsg:
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if is_geographic(src_epsg) and is_utm(dst_epsg):
        return lonlat_to_utm(x, y, dst_epsg)
    if is_utm(src_epsg) and is_geographic(dst_epsg):
        return utm_to_lonlat(x, y, src_epsg)
    if is_utm(src_epsg) and is_utm(dst_epsg):
        lon, lat = utm_to_lonlat(x, y, src_epsg)
        return lonlat_to_utm(lon, lat, dst_epsg)
    raise GeometryError(f"unsupported CRS pair EPSG:{src_epsg} -> EPSG:{dst_epsg}")


def geodesic_area_km2(lonlat_ring) -> float:
    """Spherical polygon area (km^2) of a lon/lat ring via the signed excess formula.

    Good to ~0.3% against the ellipsoid, which is ample for catalog admission
    when the provider omits the coverage field.
    """
    ring = np.asarray(lonlat_ring, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[0] < 3:
        raise GeometryError("footprint ring needs at least 3 vertices")
    if not np.allclose(ring[0], ring[-1]):
        ring = np.vstack([ring, ring[:1]])
    lon = np.radians(ring[:, 0])
    lat = np.radians(ring[:, 1])
    # Chamberlain & Duquette (2007), eq. 14
    area = np.sum((lon[1:] - lon[:-1]) * (2 + np.sin(lat[1:]) + np.sin(lat[:-1]))) / 2.0
    area = abs(area) * MEAN_EARTH_RADIUS_M**2
    return area / 1e6
