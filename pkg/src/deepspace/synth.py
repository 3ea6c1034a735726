"""Synthetic presence/absence data with an exact Bayes posterior over location.

Each taxon's prevalence at location s is

    logistic(b0 + sum_b amp_b * exp(-d(s, c_b)^2 / (2 sigma_b^2)))

with d the great-circle distance. Taxa are independent given location, so the
posterior over location for a feature vector is a product of Bernoulli terms
under a uniform prior on the domain.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .data import AreaRow, AreaTable, Dataset, Sample
from .domains import load_domain
from .ensemble import region_from_surface
from .geometry import Domain, Grid, haversine, points_in_polygons, sample_uniform

CONFIG_VERSION = 1
_ROW_CHUNK = 512


@dataclass
class TaxonField:
    """Prevalence surfaces for all taxa, bumps stored flat with their taxon index."""

    baseline: np.ndarray
    bump_taxon: np.ndarray
    bump_center: np.ndarray
    bump_scale_km: np.ndarray
    bump_amp: np.ndarray

    def __post_init__(self):
        if np.any(self.bump_scale_km <= 0):
            raise ValueError("bump scales must be positive")
        if not np.all(np.isfinite(self.bump_amp)):
            raise ValueError("bump amplitudes must be finite")

    @property
    def p(self) -> int:
        return len(self.baseline)

    def logit(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
        out = np.repeat(self.baseline[None, :], len(coords), axis=0)
        if len(self.bump_taxon):
            d = haversine(coords[:, 0:1], coords[:, 1:2], self.bump_center[None, :, 0], self.bump_center[None, :, 1])
            contrib = self.bump_amp * np.exp(-(d**2) / (2.0 * self.bump_scale_km**2))
            onehot = sp.csr_matrix(
                (np.ones(len(self.bump_taxon)), (np.arange(len(self.bump_taxon)), self.bump_taxon)),
                shape=(len(self.bump_taxon), self.p),
            )
            out += np.asarray(contrib @ onehot)
        return out

    def prevalence(self, coords) -> np.ndarray:
        """Presence probability of every taxon at each location; shape (n, p)."""
        return 1.0 / (1.0 + np.exp(-self.logit(coords)))


def prevalence(field_: TaxonField, s) -> np.ndarray:
    return field_.prevalence(np.asarray(s, dtype=np.float64).reshape(1, 2))[0]


@dataclass
class SyntheticConfig:
    p: int = 200
    n: int = 2000
    domain: str = "conus"
    n_informative: int = 30
    bumps: tuple = (1, 3)
    amplitude: tuple = (1.5, 4.0)
    scale_km: tuple = (150.0, 600.0)
    baseline: tuple = (-2.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ValueError("p and n must be >= 1")
        if not 0 <= self.n_informative <= self.p:
            raise ValueError("n_informative must lie in [0, p]")
        self.bumps = tuple(int(b) for b in self.bumps)
        self.amplitude = tuple(float(a) for a in self.amplitude)
        self.scale_km = tuple(float(a) for a in self.scale_km)
        self.baseline = tuple(float(a) for a in self.baseline)
        if self.scale_km[0] <= 0:
            raise ValueError("bump scales must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = CONFIG_VERSION
        d["domain"] = self.domain if isinstance(self.domain, str) else "custom"
        return d

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "SyntheticConfig":
        d = dict(d)
        version = d.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported synthetic config version {version}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "SyntheticConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def resolve_domain(self) -> Domain:
        return load_domain(self.domain)


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(2)]


def make_field(config: SyntheticConfig, domain: Optional[Domain] = None) -> TaxonField:
    """Draw the taxon field implied by ``config`` (independent of the sample stream)."""
    domain = domain or config.resolve_domain()
    rng, _ = _streams(config.seed)
    baseline = rng.uniform(*config.baseline, config.p)
    informative = np.sort(rng.choice(config.p, config.n_informative, replace=False))
    counts = rng.integers(config.bumps[0], config.bumps[1] + 1, len(informative))
    taxon = np.repeat(informative, counts)
    total = int(counts.sum())
    centers = sample_uniform(domain, rng, total) if total else np.zeros((0, 2))
    scales = rng.uniform(*config.scale_km, total)
    amps = rng.uniform(*config.amplitude, total) * rng.choice([-1.0, 1.0], total)
    return TaxonField(baseline, taxon.astype(np.int64), centers, scales, amps)


def generate(config: SyntheticConfig, domain: Optional[Domain] = None, field_: Optional[TaxonField] = None) -> Dataset:
    """Sample locations uniformly on the domain and features independently given location."""
    domain = domain or config.resolve_domain()
    field_ = field_ or make_field(config, domain)
    _, rng = _streams(config.seed)
    coords = sample_uniform(domain, rng, config.n)
    samples = []
    for start in range(0, config.n, _ROW_CHUNK):
        block = coords[start:start + _ROW_CHUNK]
        rho = field_.prevalence(block)
        present = rng.random(rho.shape) < rho
        for i, (row, (lat, lon)) in enumerate(zip(present, block)):
            sid = f"s{start + i:06d}"
            samples.append(Sample(sid, float(lat), float(lon), tuple(np.flatnonzero(row).tolist())))
    return Dataset(tuple(samples), config.p, domain.name)


class BayesOracle:
    """Exact posterior over grid cells for data drawn from a known TaxonField."""

    def __init__(self, field_: TaxonField, grid: Grid):
        self.field = field_
        self.grid = grid
        rho = np.clip(field_.prevalence(grid.centers), 1e-300, 1 - 1e-16)
        self._log_odds = (np.log(rho) - np.log1p(-rho)).T  # (p, cells)
        self._log_absent = np.log1p(-rho).sum(axis=1)  # (cells,)

    def _loglik(self, X, coords=None):
        X = sp.csr_matrix(X, dtype=np.float64)
        if coords is None:
            return np.asarray(X @ self._log_odds) + self._log_absent[None, :]
        rho = np.clip(self.field.prevalence(coords), 1e-300, 1 - 1e-16)
        lo = np.log(rho) - np.log1p(-rho)
        return np.asarray(X.multiply(lo).sum(axis=1)).ravel() + np.log1p(-rho).sum(axis=1)

    def density_grid(self, X) -> np.ndarray:
        """Posterior density per km^2 on grid cells; each row integrates to 1 over the grid."""
        ll = self._loglik(X)
        ll -= ll.max(axis=1, keepdims=True)
        post = np.exp(ll)
        post /= (post * self.grid.cell_area_km2[None, :]).sum(axis=1, keepdims=True)
        return post

    def predict(self, X) -> np.ndarray:
        return self.grid.centers[np.argmax(self._loglik(X), axis=1)]

    def evaluate(self, X, coords, mass=0.9):
        X = sp.csr_matrix(X, dtype=np.float64)
        coords = np.asarray(coords, dtype=np.float64)
        preds, covered = [], []
        for s in range(0, X.shape[0], _ROW_CHUNK):
            xb = X[s:s + _ROW_CHUNK]
            ll = self._loglik(xb)
            top = ll.max(axis=1, keepdims=True)
            post = np.exp(ll - top)
            norm = (post * self.grid.cell_area_km2[None, :]).sum(axis=1)
            dens_grid = post / norm[:, None]
            truth = np.exp(self._loglik(xb, coords[s:s + _ROW_CHUNK]) - top[:, 0]) / norm
            preds.append(self.grid.centers[np.argmax(ll, axis=1)])
            for row, t in zip(dens_grid, truth):
                covered.append(bool(t >= region_from_surface(row, self.grid.cell_area_km2, mass).threshold))
        pred = np.vstack(preds)
        err = haversine(coords[:, 0], coords[:, 1], pred[:, 0], pred[:, 1])
        return {"pred": pred, "error_km": err, "covered": np.array(covered)}


def oracle_posterior(config: SyntheticConfig, x, grid: Grid) -> np.ndarray:
    field_ = make_field(config)
    X = sp.csr_matrix(np.atleast_2d(x)) if not sp.issparse(x) else x
    return BayesOracle(field_, grid).density_grid(X)


def label_areas(ds: Dataset, areas: AreaTable, level: Optional[str] = None) -> Dataset:
    """Attach area labels by locating each sample in the table's polygons.

    Labels for every level are joined with ``|`` in table order; ``level``
    restricts to one level.
    """
    coords = ds.coords
    per_sample = [[] for _ in range(len(ds))]
    for row in areas.rows:
        if level is not None and row.level != level:
            continue
        polys = areas.polygons.get(row.polygon_id)
        if not polys:
            continue
        inside = points_in_polygons(coords, [tuple(np.asarray(r, dtype=float) for r in poly) for poly in polys])
        for i in np.flatnonzero(inside):
            if not any(areas[lab].level == row.level for lab in per_sample[i]):
                per_sample[i].append(row.label)
    samples = tuple(replace(s, area_label="|".join(labs) or None) for s, labs in zip(ds.samples, per_sample))
    return Dataset(samples, ds.p, ds.domain_ref)


def country_dataset(n=800, p=120, n_countries=8, signature=6, seed=0, inside=0.7, outside=0.05,
                    populations=None):
    """Rectangular "countries" tiling a box, each with its own block of signature taxa.

    Countries form a 2-row grid of 10-degree squares. Taxa ``c*signature`` to
    ``(c+1)*signature - 1`` are present with probability ``inside`` in country c
    and ``outside`` elsewhere; the remaining taxa are background noise with a
    location-independent prevalence. Returns (dataset, area table, domain).

    Populations default to 100 per km^2 of country area, which matches the
    uniform sampling of locations; other values tilt weighted models toward
    the more populous countries.
    """
    if n_countries % 2 or n_countries < 2:
        raise ValueError("n_countries must be even and >= 2")
    if n_countries * signature > p:
        raise ValueError("not enough taxa for the signatures")
    cols = n_countries // 2
    domain = Domain.from_bbox(0.0, 20.0, 0.0, 10.0 * cols, name="countries")
    rng_field, rng = _streams(seed)
    rows, polygons = [], {}
    for c in range(n_countries):
        r, k = divmod(c, cols)
        lat0, lon0 = 10.0 * r, 10.0 * k
        ring = [[lon0, lat0], [lon0 + 10, lat0], [lon0 + 10, lat0 + 10], [lon0, lat0 + 10], [lon0, lat0]]
        polygons[f"P{c}"] = [[np.array(ring, dtype=np.float64)]]
        pop = 100.0 * Domain([[ring]]).area_km2 if populations is None else float(populations[c])
        rows.append(AreaRow(f"C{c}", pop, f"P{c}", "country"))
    noise = rng_field.uniform(0.05, 0.3, p)
    coords = sample_uniform(domain, rng, n)
    country = np.minimum(coords[:, 0] // 10, 1).astype(int) * cols + np.minimum(coords[:, 1] // 10, cols - 1).astype(int)
    rho = np.repeat(noise[None, :], n, axis=0)
    sig = np.arange(n_countries * signature).reshape(n_countries, signature)
    rho[:, sig.ravel()] = outside
    rho[np.arange(n)[:, None], sig[country]] = inside
    present = rng.random(rho.shape) < rho
    samples = tuple(
        Sample(f"s{i:06d}", float(lat), float(lon), tuple(np.flatnonzero(present[i]).tolist()), 1.0, f"C{country[i]}")
        for i, (lat, lon) in enumerate(coords)
    )
    return Dataset(samples, p, domain.name), AreaTable(rows, polygons), domain
