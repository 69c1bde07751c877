import math

import numpy as np
import pytest

from wastemap.errors import GeometryError
from wastemap.geo import (
    Affine,
    geodesic_area_km2,
    epsg_to_zone,
    is_metric,
    lonlat_to_utm,
    transform_points,
    utm_epsg,
    utm_to_lonlat,
    zone_number,
)


def test_zone_formula_examples():
    # floor(lon/6)+31 with hemisphere suffix
    assert utm_epsg(39.2, -6.8) == 32737
    assert utm_epsg(0.001, 0.001) == 32631
    assert zone_number(39.2) == 37
    assert zone_number(0.001) == 31


def test_zone_epsg_roundtrip():
    for epsg in (32601, 32660, 32701, 32760, 32737):
        zone, north = epsg_to_zone(epsg)
        assert 1 <= zone <= 60
        rebuilt = (32600 if north else 32700) + zone
        assert rebuilt == epsg


def test_is_metric():
    assert is_metric(32736)
    assert not is_metric(4326)


def test_central_meridian_maps_to_false_easting():
    # zone 37 central meridian is 39E
    e, n = lonlat_to_utm(39.0, 0.0, 32637)
    assert abs(e - 500000.0) < 1e-6
    assert abs(n) < 1e-6
    # southern hemisphere adds the false northing at the equator
    e_s, n_s = lonlat_to_utm(39.0, 0.0, 32737)
    assert abs(n_s - 10000000.0) < 1e-6


def test_utm_roundtrip_accuracy():
    rng = np.random.default_rng(3)
    lons = 39.0 + rng.uniform(-2.5, 2.5, 200)
    lats = rng.uniform(-60, 60, 200)
    e, n = lonlat_to_utm(lons, lats, 32737)
    lon2, lat2 = utm_to_lonlat(e, n, 32737)
    # sub-millimeter in degrees (~1e-8 deg is about 1 mm)
    assert np.max(np.abs(lon2 - lons)) < 1e-7
    assert np.max(np.abs(lat2 - lats)) < 1e-7


def test_utm_scale_near_central_meridian():
    # 1000 m northward step along the central meridian scales by K0
    e0, n0 = lonlat_to_utm(39.0, -6.0, 32737)
    e1, n1 = lonlat_to_utm(39.0, -6.0 + 1.0 / 111.0, 32737)
    dist = math.hypot(e1 - e0, n1 - n0)
    assert 980 < dist < 1020


def test_transform_points_identity_and_pairs():
    x = np.array([500000.0, 501000.0])
    y = np.array([9300000.0, 9301000.0])
    x2, y2 = transform_points(x, y, 32736, 32736)
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    lon, lat = transform_points(x, y, 32736, 4326)
    x3, y3 = transform_points(lon, lat, 4326, 32736)
    assert np.max(np.abs(x3 - x)) < 1e-4
    assert np.max(np.abs(y3 - y)) < 1e-4


def test_latitude_out_of_range():
    with pytest.raises(GeometryError):
        lonlat_to_utm(39.0, 89.0, 32637)


def test_affine_roundtrip():
    tr = Affine.north_up(500000.0, 9300000.0, 0.05)
    x, y = tr.apply(100, 200)
    col, row = tr.invert(x, y)
    assert abs(col - 100) < 1e-9 and abs(row - 200) < 1e-9
    assert tr.is_axis_aligned


def test_affine_singular():
    tr = Affine(0, 0, 0, 0, 0, 0)
    with pytest.raises(GeometryError):
        tr.invert(1.0, 1.0)


def test_geodesic_area_rectangle_matches_spherical_formula():
    # R^2 * dlon * (sin(lat2) - sin(lat1)), computed independently
    lon0, lon1, lat0, lat1 = 30.0, 31.0, -1.0, 0.0
    ring = [(lon0, lat0), (lon1, lat0), (lon1, lat1), (lon0, lat1), (lon0, lat0)]
    got = geodesic_area_km2(ring)
    R = 6371008.8
    expected = (
        R * R * math.radians(lon1 - lon0) * (math.sin(math.radians(lat1)) - math.sin(math.radians(lat0)))
    ) / 1e6
    assert got == pytest.approx(expected, rel=1e-9)
    # sanity scale: a 1x1 degree cell near the equator is ~12,300 km2
    assert 12000 < got < 12500


def test_geodesic_area_degenerate():
    with pytest.raises(GeometryError):
        geodesic_area_km2([(0, 0), (1, 1)])
