"""Samples with sparse binary features, CSV ingestion, and population weighting."""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import DataFormatError

logger = logging.getLogger(__name__)

# Composite area labels list several levels, e.g. "NC|Wake|Raleigh"; the first
# component is the weighting unit.
LABEL_SEP = "|"


@dataclass(frozen=True)
class Sample:
    id: str
    lat: float
    lon: float
    features: tuple = ()
    weight: float = 1.0
    area_label: Optional[str] = None

    def __post_init__(self):
        feats = tuple(int(f) for f in self.features)
        if any(b <= a for a, b in zip(feats, feats[1:])):
            raise ValueError(f"sample {self.id}: feature indices must be strictly increasing")
        if feats and feats[0] < 0:
            raise ValueError(f"sample {self.id}: negative feature index")
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError(f"sample {self.id}: weight must be positive")
        object.__setattr__(self, "features", feats)

    @property
    def area_labels(self) -> tuple:
        if not self.area_label:
            return ()
        return tuple(self.area_label.split(LABEL_SEP))


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    p: int
    domain_ref: str = ""

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        if not samples:
            raise ValueError("dataset needs at least one sample")
        ids = [s.id for s in samples]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ValueError(f"duplicate sample id {dup!r}")
        for s in samples:
            if s.features and s.features[-1] >= self.p:
                raise ValueError(f"sample {s.id}: feature index {s.features[-1]} >= p={self.p}")

    def __len__(self):
        return len(self.samples)

    @property
    def ids(self) -> list:
        return [s.id for s in self.samples]

    @property
    def coords(self) -> np.ndarray:
        return np.array([[s.lat, s.lon] for s in self.samples], dtype=np.float64)

    @property
    def weights(self) -> np.ndarray:
        return np.array([s.weight for s in self.samples], dtype=np.float64)

    @property
    def X(self) -> sp.csr_matrix:
        return features_to_csr([s.features for s in self.samples], self.p)

    def subset(self, indices) -> "Dataset":
        return Dataset(tuple(self.samples[i] for i in indices), self.p, self.domain_ref)

    def check_domain(self, domain) -> None:
        inside = domain.contains(self.coords)
        if not inside.all():
            bad = self.samples[int(np.flatnonzero(~inside)[0])]
            raise DataFormatError(f"sample {bad.id!r} at ({bad.lat}, {bad.lon}) lies outside domain {domain.name!r}")


def features_to_csr(feature_lists: Sequence[Sequence[int]], p: int) -> sp.csr_matrix:
    indptr = np.zeros(len(feature_lists) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(f) for f in feature_lists])
    indices = np.fromiter((i for f in feature_lists for i in f), dtype=np.int32, count=int(indptr[-1]))
    data = np.ones(len(indices), dtype=np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(len(feature_lists), p))


def csr_to_features(X) -> list:
    X = sp.csr_matrix(X)
    return [tuple(int(j) for j in sorted(X.indices[X.indptr[i]:X.indptr[i + 1]])) for i in range(X.shape[0])]


def _parse_features(text, p, lineno, sid):
    text = text.strip()
    if not text:
        return ()
    try:
        feats = sorted({int(t) for t in text.split(";") if t.strip()})
    except ValueError as exc:
        raise DataFormatError(f"line {lineno}: sample {sid!r}: bad feature index ({exc})") from None
    if feats and (feats[0] < 0 or feats[-1] >= p):
        raise DataFormatError(f"line {lineno}: sample {sid!r}: feature index out of range [0, {p})")
    return tuple(feats)


def load_samples(path, domain=None, domain_ref: str = "", p: Optional[int] = None,
                 allow_missing_coords: bool = False) -> Dataset:
    """Read the sample CSV format.

    First line is ``p=<int>``; every following row is
    ``id,lat,lon,area_label,feat1;feat2;...``. An optional header row starting
    with ``id`` is skipped, and an optional sixth column carries the weight.

    ``p`` overrides the header's feature count (query files checked against a
    model). With ``allow_missing_coords`` blank lat/lon read as NaN.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0] or not rows[0][0].startswith("p="):
        raise DataFormatError(f"{path}: line 1: expected header 'p=<int>'")
    try:
        header_p = int(rows[0][0][2:])
    except ValueError:
        raise DataFormatError(f"{path}: line 1: bad feature count {rows[0][0]!r}") from None
    if p is None:
        p = header_p
    samples = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or (lineno == 2 and row[0] == "id"):
            continue
        if len(row) not in (5, 6):
            raise DataFormatError(f"{path}: line {lineno}: expected 5 or 6 fields, got {len(row)}")
        sid = row[0]
        if sid in seen:
            raise DataFormatError(f"{path}: line {lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        try:
            if allow_missing_coords and not row[1].strip() and not row[2].strip():
                lat = lon = math.nan
            else:
                lat, lon = float(row[1]), float(row[2])
            weight = float(row[5]) if len(row) == 6 and row[5] else 1.0
        except ValueError:
            raise DataFormatError(f"{path}: line {lineno}: sample {sid!r}: non-numeric field") from None
        try:
            feats = _parse_features(row[4], p, lineno, sid)
        except DataFormatError as exc:
            raise DataFormatError(f"{path}: {exc}") from None
        try:
            samples.append(Sample(sid, lat, lon, feats, weight, row[3] or None))
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not samples:
        raise DataFormatError(f"{path}: no samples")
    ds = Dataset(tuple(samples), p, domain_ref or (domain.name if domain is not None else ""))
    if domain is not None:
        ds.check_domain(domain)
    return ds


def save_samples(ds: Dataset, path, with_weights: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"p={ds.p}\n")
        w = csv.writer(fh, lineterminator="\n")
        for s in ds.samples:
            row = [s.id, repr(float(s.lat)), repr(float(s.lon)), s.area_label or "", ";".join(map(str, s.features))]
            if with_weights:
                row.append(repr(float(s.weight)))
            w.writerow(row)


@dataclass(frozen=True)
class AreaRow:
    label: str
    population: float
    polygon_id: str
    level: str = "area"


@dataclass
class AreaTable:
    """Administrative areas with populations and (optionally) polygons.

    ``polygons`` maps polygon_id to a list of polygons in the Domain layout
    (each polygon a list of (lon, lat) rings).
    """

    rows: list
    polygons: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = [r.label for r in self.rows]
        if len(set(labels)) != len(labels):
            raise ValueError("area labels must be unique")
        for r in self.rows:
            if r.population < 0 or not math.isfinite(r.population):
                raise ValueError(f"area {r.label!r}: population must be non-negative")
        self._by_label = {r.label: r for r in self.rows}

    def __contains__(self, label):
        return label in self._by_label

    def __getitem__(self, label) -> AreaRow:
        return self._by_label[label]

    @property
    def levels(self) -> list:
        out = []
        for r in self.rows:
            if r.level not in out:
                out.append(r.level)
        return out

    def polygon(self, label):
        row = self._by_label.get(label)
        if row is None:
            return None
        return self.polygons.get(row.polygon_id)

    @classmethod
    def load(cls, table_path, geojson_path=None) -> "AreaTable":
        """Read ``area_label,population,polygon_id[,level]`` rows plus a GeoJSON keyed by polygon_id."""
        rows = []
        with open(table_path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), start=1):
                if not row or (lineno == 1 and row[0] == "area_label"):
                    continue
                if len(row) not in (3, 4):
                    raise DataFormatError(f"{table_path}: line {lineno}: expected 3 or 4 fields")
                try:
                    pop = float(row[1])
                except ValueError:
                    raise DataFormatError(f"{table_path}: line {lineno}: bad population {row[1]!r}") from None
                rows.append(AreaRow(row[0], pop, row[2], row[3] if len(row) == 4 and row[3] else "area"))
        polygons = load_area_polygons(geojson_path) if geojson_path else {}
        return cls(rows, polygons)

    def save(self, table_path, geojson_path=None) -> None:
        with open(table_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["area_label", "population", "polygon_id", "level"])
            for r in self.rows:
                w.writerow([r.label, repr(float(r.population)), r.polygon_id, r.level])
        if geojson_path is not None:
            feats = [
                {
                    "type": "Feature",
                    "properties": {"polygon_id": pid},
                    "geometry": {
                        "type": "MultiPolygon",
                        "coordinates": [[np.asarray(ring, dtype=float).tolist() for ring in poly] for poly in polys],
                    },
                }
                for pid, polys in sorted(self.polygons.items())
            ]
            with open(geojson_path, "w") as fh:
                json.dump({"type": "FeatureCollection", "features": feats}, fh)


def load_area_polygons(path) -> dict:
    """Polygons from a FeatureCollection keyed by ``properties.polygon_id`` or the feature ``id``."""
    from .geometry import _geojson_polygons

    with open(path) as fh:
        obj = json.load(fh)
    out = {}
    for feat in obj.get("features", []):
        pid = feat.get("properties", {}).get("polygon_id", feat.get("id"))
        if pid is None:
            raise DataFormatError(f"{path}: feature without polygon_id")
        out[str(pid)] = _geojson_polygons(feat)
    return out


def compute_weights(ds: Dataset, areas: Optional[AreaTable]) -> Dataset:
    """Weight each sample by its area's population over the area's sample count.

    Samples without a label (or whose label is missing from the table) keep
    weight 1.0 and a warning is logged.
    """
    primary = [s.area_labels[0] if s.area_labels else None for s in ds.samples]
    counts = Counter(lab for lab in primary if lab is not None and areas is not None and lab in areas)
    unweighted = 0
    out = []
    for s, lab in zip(ds.samples, primary):
        if lab is None or areas is None or lab not in areas:
            unweighted += 1
            out.append(replace(s, weight=1.0))
            continue
        pop = areas[lab].population
        if pop <= 0:
            raise ValueError(f"area {lab!r} has samples but zero population")
        out.append(replace(s, weight=pop / counts[lab]))
    if unweighted:
        logger.warning("%d of %d samples have no area in the table; weight 1.0 used", unweighted, len(ds))
    return Dataset(tuple(out), ds.p, ds.domain_ref)
