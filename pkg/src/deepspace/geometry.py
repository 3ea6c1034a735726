"""Geographic primitives: distances, domain polygons, sampling, Voronoi tiles, grids.

Coordinates are carried as ``(n, 2)`` float arrays with columns ``(lat, lon)`` in
degrees. Polygon rings follow GeoJSON and are stored as ``(m, 2)`` arrays in
``(lon, lat)`` order.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DegenerateDomainError

EARTH_RADIUS_KM = 6371.0088

# Tile assignment works in row blocks to bound the (rows x seeds) score matrix.
_ASSIGN_CHUNK = 8192


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in km. Broadcasts over array inputs."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    c = 2.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    d = EARTH_RADIUS_KM * c
    return float(d) if np.ndim(d) == 0 else d


def initial_bearing(lat1, lon1, lat2, lon2):
    """Initial bearing in radians, clockwise from north."""
    phi1 = np.radians(lat1)
    phi2 = np.radians(lat2)
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    x = np.sin(dlam) * np.cos(phi2)
    y = np.cos(phi1) * np.sin(phi2) - np.sin(phi1) * np.cos(phi2) * np.cos(dlam)
    return np.arctan2(x, y)


def unit_vectors(coords) -> np.ndarray:
    """Map ``(n, 2)`` lat/lon degrees to ``(n, 3)`` points on the unit sphere."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    phi = np.radians(coords[:, 0])
    lam = np.radians(coords[:, 1])
    cphi = np.cos(phi)
    return np.column_stack([cphi * np.cos(lam), cphi * np.sin(lam), np.sin(phi)])


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon < 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180)")

    def as_array(self) -> np.ndarray:
        return np.array([self.lat, self.lon], dtype=np.float64)


def check_coords(coords, name="coords") -> np.ndarray:
    """Validate an ``(n, 2)`` lat/lon array and return it as float64."""
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 2:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2) of (lat, lon), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(np.abs(arr[:, 0]) > 90.0) or np.any(np.abs(arr[:, 1]) > 180.0):
        raise ValueError(f"{name} outside valid latitude/longitude bounds")
    return arr


def _close_ring(ring) -> np.ndarray:
    ring = np.asarray(ring, dtype=np.float64)
    if ring.ndim != 2 or ring.shape[1] < 2:
        raise ValueError("ring must be a sequence of [lon, lat] pairs")
    ring = ring[:, :2]
    if not np.array_equal(ring[0], ring[-1]):
        ring = np.vstack([ring, ring[:1]])
    if len(ring) < 4:
        raise ValueError("ring needs at least three distinct vertices")
    return ring


def _ring_signed_integral(ring: np.ndarray) -> float:
    # Green's theorem: area element cos(lat) dlat dlon equals -sin(lat) dlon on the boundary,
    # with edges straight in the lon/lat plane.
    lam = np.radians(ring[:, 0])
    phi = np.radians(ring[:, 1])
    dlam = np.diff(lam)
    p1, p2 = phi[:-1], phi[1:]
    dphi = p2 - p1
    flat = np.abs(dphi) < 1e-12
    safe = np.where(flat, 1.0, dphi)
    term = np.where(flat, dlam * np.sin(0.5 * (p1 + p2)), dlam * (np.cos(p1) - np.cos(p2)) / safe)
    return float(np.sum(term))


def _points_in_ring(lat, lon, ring, edge_tol, order, lat_sorted):
    """Crossing parity and on-edge flags of every point against one ring.

    Only points whose latitude lies within an edge's latitude span can cross or
    touch it, so each edge works on a contiguous slice of the lat-sorted points.
    """
    odd = np.zeros(lat.shape, dtype=bool)
    on_edge = np.zeros(lat.shape, dtype=bool)
    for (ax, ay), (bx, by) in zip(ring[:-1], ring[1:]):
        lo = np.searchsorted(lat_sorted, min(ay, by) - edge_tol, side="left")
        hi = np.searchsorted(lat_sorted, max(ay, by) + edge_tol, side="right")
        if hi <= lo:
            continue
        idx = order[lo:hi]
        py, px = lat[idx], lon[idx]
        if ay != by:
            straddle = (ay > py) != (by > py)
            xint = (bx - ax) * (py - ay) / (by - ay) + ax
            odd[idx[straddle & (px < xint)]] ^= True
        cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
        seg = math.hypot(bx - ax, by - ay)
        hit = (
            (np.abs(cross) <= edge_tol * max(seg, 1.0))
            & (px >= min(ax, bx) - edge_tol)
            & (px <= max(ax, bx) + edge_tol)
        )
        on_edge[idx[hit]] = True
    return odd, on_edge


def points_in_polygons(coords, polygons, edge_tol: float = 1e-9) -> np.ndarray:
    """Even-odd membership over every ring of ``polygons``; edge points count as inside."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    lat, lon = coords[:, 0], coords[:, 1]
    order = np.argsort(lat, kind="stable")
    lat_sorted = lat[order]
    parity = np.zeros(len(coords), dtype=bool)
    edge = np.zeros(len(coords), dtype=bool)
    for poly in polygons:
        for ring in poly:
            odd, on = _points_in_ring(lat, lon, ring, edge_tol, order, lat_sorted)
            parity ^= odd
            edge |= on
    return parity | edge


class Domain:
    """A spatial domain made of one or more lon/lat polygons with optional holes.

    Edges are straight lines in the lon/lat plane; membership uses the even-odd
    rule over all rings and areas are exact spherical areas of that region.
    """

    def __init__(self, polygons: Sequence[Sequence[Iterable]], name: str = "domain"):
        polys = []
        for poly in polygons:
            rings = tuple(_close_ring(r) for r in poly)
            if not rings:
                raise ValueError("polygon without an outer ring")
            polys.append(rings)
        if not polys:
            raise ValueError("domain needs at least one polygon")
        self.polygons = tuple(polys)
        self.name = name
        allv = np.vstack([r for p in self.polygons for r in p])
        # (lat_min, lat_max, lon_min, lon_max)
        self.bbox = (
            float(allv[:, 1].min()),
            float(allv[:, 1].max()),
            float(allv[:, 0].min()),
            float(allv[:, 0].max()),
        )
        total = 0.0
        for poly in self.polygons:
            outer, holes = poly[0], poly[1:]
            total += abs(_ring_signed_integral(outer))
            total -= sum(abs(_ring_signed_integral(h)) for h in holes)
        self.area_km2 = EARTH_RADIUS_KM**2 * total
        if not self.area_km2 > 0:
            raise DegenerateDomainError(f"domain {name!r} has non-positive area")

    def __repr__(self):
        return f"Domain(name={self.name!r}, polygons={len(self.polygons)}, area_km2={self.area_km2:.1f})"

    def __eq__(self, other):
        if not isinstance(other, Domain) or len(self.polygons) != len(other.polygons):
            return False
        for a, b in zip(self.polygons, other.polygons):
            if len(a) != len(b) or not all(np.array_equal(r, s) for r, s in zip(a, b)):
                return False
        return True

    def contains(self, coords) -> np.ndarray:
        return points_in_polygons(coords, self.polygons)

    @classmethod
    def from_bbox(cls, lat_min, lat_max, lon_min, lon_max, name="bbox"):
        ring = [
            [lon_min, lat_min],
            [lon_max, lat_min],
            [lon_max, lat_max],
            [lon_min, lat_max],
            [lon_min, lat_min],
        ]
        return cls([[ring]], name=name)

    @classmethod
    def from_geojson(cls, obj, name=None):
        """Build from a GeoJSON Polygon/MultiPolygon, Feature, FeatureCollection, or a path."""
        if isinstance(obj, (str, Path)):
            path = Path(obj)
            with open(path) as fh:
                obj = json.load(fh)
            name = name or path.stem
        polys = _geojson_polygons(obj)
        return cls(polys, name=name or "domain")

    def to_geojson(self) -> dict:
        geom = {
            "type": "MultiPolygon",
            "coordinates": [[ring.tolist() for ring in poly] for poly in self.polygons],
        }
        return {"type": "Feature", "properties": {"name": self.name}, "geometry": geom}


def _geojson_polygons(obj) -> list:
    kind = obj.get("type")
    if kind == "FeatureCollection":
        out = []
        for feat in obj["features"]:
            out.extend(_geojson_polygons(feat))
        return out
    if kind == "Feature":
        return _geojson_polygons(obj["geometry"])
    if kind == "Polygon":
        return [obj["coordinates"]]
    if kind == "MultiPolygon":
        return list(obj["coordinates"])
    raise ValueError(f"unsupported GeoJSON type {kind!r}")


def point_in_domain(domain: Domain, s) -> bool:
    lat, lon = (s.lat, s.lon) if isinstance(s, GeoPoint) else s
    return bool(domain.contains(np.array([[lat, lon]]))[0])


def sample_uniform(domain: Domain, rng, count: int, probe: int = 20000) -> np.ndarray:
    """Draw ``count`` points uniformly per unit spherical area inside ``domain``.

    Rejection sampling on the bounding box with longitude uniform and sin(lat)
    uniform. Raises DegenerateDomainError when the acceptance rate on a probe
    batch falls below 1e-4.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    lat_min, lat_max, lon_min, lon_max = domain.bbox
    z_lo, z_hi = math.sin(math.radians(lat_min)), math.sin(math.radians(lat_max))

    def draw(m):
        z = rng.uniform(z_lo, z_hi, m)
        lon = rng.uniform(lon_min, lon_max, m)
        pts = np.column_stack([np.degrees(np.arcsin(z)), lon])
        return pts[domain.contains(pts)]

    first = draw(probe)
    rate = len(first) / probe
    if rate < 1e-4:
        raise DegenerateDomainError(
            f"acceptance rate {rate:.2e} < 1e-4 on domain {domain.name!r}; "
            "check the polygon orientation and extent"
        )
    chunks = [first]
    have = len(first)
    while have < count:
        m = int(min(2_000_000, math.ceil((count - have) / rate * 1.1) + 64))
        got = draw(m)
        chunks.append(got)
        have += len(got)
    return np.vstack(chunks)[:count]


def _nearest_by_dot(points_u, seeds_u) -> np.ndarray:
    out = np.empty(len(points_u), dtype=np.int64)
    st = seeds_u.T
    for start in range(0, len(points_u), _ASSIGN_CHUNK):
        out[start:start + _ASSIGN_CHUNK] = np.argmax(points_u[start:start + _ASSIGN_CHUNK] @ st, axis=1)
    return out


def nearest_seed(coords, seeds, metric: str = "haversine") -> np.ndarray:
    """Index of the nearest seed for each point, lowest index on ties."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    if metric == "haversine":
        # Great-circle distance is monotone in chord length and in the unit-vector dot product.
        su = unit_vectors(seeds)
        pu = unit_vectors(coords)
        if len(seeds) < 32 or len(coords) < 256:
            return _nearest_by_dot(pu, su)
        dist, idx = cKDTree(su).query(pu, k=2)
        out = idx[:, 0].astype(np.int64)
        # near-ties go through the exhaustive scan so the lowest index wins deterministically
        close = dist[:, 1] - dist[:, 0] <= 1e-9 * np.maximum(dist[:, 1], 1e-12)
        if np.any(close):
            out[close] = _nearest_by_dot(pu[close], su)
        return out
    if metric == "planar":
        out = np.empty(len(coords), dtype=np.int64)
        for start in range(0, len(coords), _ASSIGN_CHUNK):
            c = coords[start:start + _ASSIGN_CHUNK]
            d2 = (c[:, None, 0] - seeds[None, :, 0]) ** 2 + (c[:, None, 1] - seeds[None, :, 1]) ** 2
            out[start:start + _ASSIGN_CHUNK] = np.argmin(d2, axis=1)
        return out
    raise ValueError(f"unknown metric {metric!r}")


def estimate_areas(domain: Domain, seeds, mc_points: int, rng, metric: str = "haversine") -> np.ndarray:
    """Monte-Carlo tile areas in km^2; tiles with no hits get ``area_km2 / mc_points``."""
    seeds = np.asarray(seeds, dtype=np.float64).reshape(-1, 2)
    k = len(seeds)
    if mc_points < 10 * k:
        raise ValueError(f"mc_points={mc_points} must be >= 10*K={10 * k}")
    if k == 1:
        return np.array([domain.area_km2])
    pts = sample_uniform(domain, rng, mc_points)
    hits = np.bincount(nearest_seed(pts, seeds, metric), minlength=k)
    areas = domain.area_km2 * hits / mc_points
    areas[hits == 0] = domain.area_km2 / mc_points
    return areas


@dataclass(frozen=True)
class VoronoiPartition:
    seeds: np.ndarray
    areas: np.ndarray
    mc_points: int
    metric: str = "haversine"

    def __post_init__(self):
        if len(self.seeds) < 1 or len(self.seeds) != len(self.areas):
            raise ValueError("seeds and areas must be non-empty and aligned")

    @property
    def n_tiles(self) -> int:
        return len(self.seeds)

    def assign(self, coords) -> np.ndarray:
        return nearest_seed(coords, self.seeds, self.metric)


def make_partition(domain: Domain, k: int, rng, mc_points: int = 100_000,
                   metric: str = "haversine") -> VoronoiPartition:
    if k < 2:
        raise ValueError("a partition needs k >= 2 seeds")
    rng = np.random.default_rng(rng)
    seeds = sample_uniform(domain, rng, k)
    areas = estimate_areas(domain, seeds, mc_points, rng, metric)
    return VoronoiPartition(seeds=seeds, areas=areas, mc_points=mc_points, metric=metric)


def assign_tile(partition: VoronoiPartition, s) -> int:
    lat, lon = (s.lat, s.lon) if isinstance(s, GeoPoint) else s
    return int(partition.assign(np.array([[lat, lon]]))[0])


@dataclass(frozen=True)
class Grid:
    """Regular lat/lon grid restricted to a domain.

    Cells are listed in scan order (latitude ascending, then longitude
    ascending); only cells whose centers lie in the domain are kept.
    """

    centers: np.ndarray
    cell_area_km2: np.ndarray
    resolution: float
    origin: tuple = field(default=(0.0, 0.0))

    def __len__(self):
        return len(self.centers)

    @property
    def total_area_km2(self) -> float:
        return float(self.cell_area_km2.sum())

    def to_csv(self, path, values=None, value_name="value"):
        write_grid_csv(path, self, values, value_name)


def make_grid(domain: Domain, resolution: float) -> Grid:
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    lat_min, lat_max, lon_min, lon_max = domain.bbox
    nlat = max(1, int(math.ceil((lat_max - lat_min) / resolution - 1e-9)))
    nlon = max(1, int(math.ceil((lon_max - lon_min) / resolution - 1e-9)))
    lats = lat_min + (np.arange(nlat) + 0.5) * resolution
    lons = lon_min + (np.arange(nlon) + 0.5) * resolution
    lat_g, lon_g = np.meshgrid(lats, lons, indexing="ij")
    centers = np.column_stack([lat_g.ravel(), lon_g.ravel()])
    centers = centers[domain.contains(centers)]
    if len(centers) == 0:
        raise DegenerateDomainError(f"no grid cell centers fall in {domain.name!r} at {resolution} deg")
    half = math.radians(resolution) / 2.0
    phi = np.radians(centers[:, 0])
    top = np.clip(phi + half, -np.pi / 2, np.pi / 2)
    bottom = np.clip(phi - half, -np.pi / 2, np.pi / 2)
    cell_area = EARTH_RADIUS_KM**2 * math.radians(resolution) * (np.sin(top) - np.sin(bottom))
    return Grid(centers=centers, cell_area_km2=cell_area, resolution=float(resolution),
                origin=(lat_min, lon_min))


def write_grid_csv(path, grid: Grid, values=None, value_name="value"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lat", "lon", "cell_area_km2", value_name])
        vals = np.full(len(grid), np.nan) if values is None else np.asarray(values)
        for (lat, lon), a, v in zip(grid.centers, grid.cell_area_km2, vals):
            w.writerow([repr(float(lat)), repr(float(lon)), repr(float(a)), repr(float(v))])


def sphere_centroid(points) -> np.ndarray:
    """Normalized mean of unit vectors, returned as a (lat, lon) pair."""
    u = unit_vectors(points).mean(axis=0)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValueError("centroid undefined for antipodally balanced points")
    u = u / norm
    return np.array([math.degrees(math.asin(np.clip(u[2], -1, 1))), math.degrees(math.atan2(u[1], u[0]))])


def sample_boundary(ring, count: int = 2000) -> np.ndarray:
    """``count`` points evenly spaced by lon/lat arc length along a closed ring, as (lat, lon)."""
    ring = np.asarray(ring, dtype=np.float64)
    seg = np.hypot(*(ring[1:] - ring[:-1]).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    t = np.arange(count) * (cum[-1] / count)
    lon = np.interp(t, cum, ring[:, 0])
    lat = np.interp(t, cum, ring[:, 1])
    return np.column_stack([lat, lon])
