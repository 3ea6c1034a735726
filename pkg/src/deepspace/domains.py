"""Built-in domains usable by name from the CLI and tests."""
from __future__ import annotations

from .geometry import Domain

# Coarse outline of the contiguous United States, counterclockwise, (lon, lat).
CONUS_RING = [
    (-124.7, 48.4), (-124.1, 46.2), (-124.2, 42.0), (-124.4, 40.4), (-123.8, 39.5),
    (-122.5, 37.8), (-121.9, 36.6), (-120.6, 34.6), (-118.5, 34.0), (-117.1, 32.5),
    (-114.8, 32.5), (-111.1, 31.3), (-108.2, 31.3), (-106.5, 31.8), (-104.5, 29.7),
    (-103.0, 29.0), (-101.0, 29.8), (-99.5, 27.5), (-97.2, 25.9), (-97.2, 27.6),
    (-94.0, 29.6), (-91.5, 29.5), (-89.4, 29.0), (-89.0, 30.3), (-86.5, 30.4),
    (-84.3, 30.0), (-82.8, 27.9), (-81.8, 25.9), (-80.4, 25.2), (-80.0, 26.8),
    (-81.3, 30.0), (-81.0, 32.0), (-78.0, 33.8), (-75.5, 35.2), (-76.0, 37.0),
    (-75.5, 38.5), (-74.0, 40.5), (-71.9, 41.3), (-70.0, 41.7), (-70.7, 43.0),
    (-67.0, 44.8), (-67.8, 47.1), (-69.2, 47.5), (-70.0, 46.7), (-71.5, 45.0),
    (-74.7, 45.0), (-76.3, 44.2), (-79.2, 43.5), (-79.0, 42.8), (-83.1, 42.0),
    (-82.5, 43.0), (-84.8, 46.5), (-89.6, 48.0), (-94.8, 49.4), (-95.2, 49.0),
    (-123.0, 49.0), (-124.7, 48.4),
]


def conus() -> Domain:
    return Domain([[CONUS_RING]], name="conus")


def unit_square() -> Domain:
    return Domain.from_bbox(0.0, 1.0, 0.0, 1.0, name="unit_square")


BUILTIN = {"conus": conus, "unit_square": unit_square}


def load_domain(ref) -> Domain:
    """Resolve a built-in domain name or a GeoJSON path."""
    if isinstance(ref, Domain):
        return ref
    if str(ref) in BUILTIN:
        return BUILTIN[str(ref)]()
    return Domain.from_geojson(ref)
