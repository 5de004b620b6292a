"""Spherical-earth geodesy: great-circle distance, initial bearing, and the
inverse destination problem. Earth modeled as a sphere of radius 6371 km,
plenty for the km-scale association distances used here.
"""
from __future__ import annotations

import math

from .errors import DegenerateGeometry

EARTH_RADIUS_KM = 6371.0

Point = tuple[float, float]  # (lat, lon) in degrees


def haversine_km(a: Point, b: Point) -> float:
    """Great-circle distance between two (lat, lon) points in km."""
    lat1, lon1 = math.radians(a[0]), math.radians(a[1])
    lat2, lon2 = math.radians(b[0]), math.radians(b[1])
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return EARTH_RADIUS_KM * 2.0 * math.atan2(math.sqrt(h), math.sqrt(1.0 - h))


def initial_bearing_deg(frm: Point, to: Point) -> float:
    """Initial great-circle bearing from ``frm`` to ``to``, degrees clockwise
    from true north in [0, 360)."""
    if frm == to:
        raise DegenerateGeometry(f"identical points {frm}")
    lat1, lon1 = math.radians(frm[0]), math.radians(frm[1])
    lat2, lon2 = math.radians(to[0]), math.radians(to[1])
    dlon = lon2 - lon1
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    return math.degrees(math.atan2(y, x)) % 360.0


def angle_offset_deg(azimuth_deg: float, bearing_deg: float) -> float:
    """Minimal absolute angular difference between two compass angles, in [0, 180]."""
    diff = abs(azimuth_deg - bearing_deg) % 360.0
    return 360.0 - diff if diff > 180.0 else diff


def destination_point(origin: Point, bearing_deg: float, distance_km: float) -> Point:
    """Point reached travelling ``distance_km`` along ``bearing_deg`` from ``origin``."""
    delta = distance_km / EARTH_RADIUS_KM
    theta = math.radians(bearing_deg)
    lat1, lon1 = math.radians(origin[0]), math.radians(origin[1])
    lat2 = math.asin(
        math.sin(lat1) * math.cos(delta) + math.cos(lat1) * math.sin(delta) * math.cos(theta)
    )
    lon2 = lon1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(lat1),
        math.cos(delta) - math.sin(lat1) * math.sin(lat2),
    )
    lon2_deg = (math.degrees(lon2) + 180.0) % 360.0 - 180.0
    return math.degrees(lat2), lon2_deg
