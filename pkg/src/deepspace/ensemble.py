"""Random Voronoi partition ensemble: intensity surface, point predictions, regions."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted
from threadpoolctl import threadpool_limits

from .classifiers import ClassifierSpec
from .classifiers._base import check_binary_X
from .exceptions import DivergenceError, PartitionError
from .geometry import Domain, Grid, VoronoiPartition, check_coords, haversine, make_grid, make_partition

logger = logging.getLogger(__name__)

_QUERY_CHUNK = 256
MIXED_FRACTIONS = tuple(round(0.05 * i, 2) for i in range(1, 11))


@dataclass(frozen=True)
class PartitionScheme:
    """How many seeds each partition gets.

    ``fractions`` are shares of the training-set size, one drawn uniformly per
    partition, with K = max(2, round(fraction * n)). ``n_seeds`` pins K directly.
    """

    name: str = "mixed"
    fractions: tuple = MIXED_FRACTIONS
    n_seeds: Optional[int] = None

    def __post_init__(self):
        if self.n_seeds is None:
            if not self.fractions or any(not 0 < f <= 1 for f in self.fractions):
                raise ValueError("fractions must lie in (0, 1]")
        elif self.n_seeds < 2:
            raise ValueError("n_seeds must be >= 2")

    @classmethod
    def coarse(cls):
        return cls("coarse", (0.05,))

    @classmethod
    def fine(cls):
        return cls("fine", (0.50,))

    @classmethod
    def mixed(cls):
        return cls("mixed", MIXED_FRACTIONS)

    @classmethod
    def fixed(cls, k):
        return cls(f"fixed{k}", (), int(k))

    @classmethod
    def from_name(cls, name):
        if isinstance(name, PartitionScheme):
            return name
        name = str(name).lower()
        if name in ("coarse", "fine", "mixed"):
            return getattr(cls, name)()
        if name.startswith("fixed"):
            return cls.fixed(int(name[5:]))
        raise ValueError(f"unknown partition scheme {name!r}")

    def draw_k(self, n, rng) -> int:
        if self.n_seeds is not None:
            return self.n_seeds
        frac = self.fractions[0] if len(self.fractions) == 1 else self.fractions[int(rng.integers(len(self.fractions)))]
        return max(2, int(math.floor(frac * n + 0.5)))


@dataclass
class EnsembleMember:
    partition: VoronoiPartition
    classifier: object
    cell_tile: np.ndarray

    @property
    def occupied(self) -> np.ndarray:
        return np.asarray(self.classifier.classes_, dtype=np.int64)

    def tile_values(self, X) -> np.ndarray:
        """Per-tile intensity q_k(x) / A_k, zero on unoccupied tiles; shape (n, K)."""
        q = self.classifier.predict_proba(X)
        out = np.zeros((q.shape[0], self.partition.n_tiles))
        occ = self.occupied
        out[:, occ] = q / self.partition.areas[occ]
        return out


@dataclass
class PredictionRegion:
    target_mass: float
    cells: np.ndarray
    achieved_mass: float
    threshold: float
    area_km2: float = field(default=0.0)

    def __len__(self):
        return len(self.cells)


def region_from_surface(values, cell_area, mass) -> PredictionRegion:
    """Highest-density cells reaching ``mass`` of the grid-integrated surface."""
    if not 0 < mass <= 1:
        raise ValueError("mass must lie in (0, 1]")
    values = np.asarray(values, dtype=np.float64)
    m = values * cell_area
    total = m.sum()
    order = np.argsort(-values, kind="stable")
    if total <= 0:
        return PredictionRegion(mass, order, 1.0, 0.0, float(cell_area.sum()))
    cum = np.cumsum(m[order]) / total
    idx = min(int(np.searchsorted(cum, mass - 1e-12, side="left")), len(order) - 1)
    threshold = values[order[idx]]
    n_in = int(np.count_nonzero(values >= threshold))
    cells = order[:n_in]
    achieved = float(m[cells].sum() / total)
    return PredictionRegion(float(mass), cells, achieved, float(threshold), float(cell_area[cells].sum()))


def _fit_member(j, seed_seq, X, coords, weights, domain, scheme, template, grid_centers,
                mc_points, metric, max_redraws):
    rng = np.random.default_rng(seed_seq)
    n = X.shape[0]
    with threadpool_limits(1):
        for attempt in range(max_redraws + 1):
            k = scheme.draw_k(n, rng)
            part = make_partition(domain, k, rng, mc_points, metric)
            tiles = part.assign(coords)
            if np.unique(tiles).size >= 2:
                break
            logger.debug("member %d: single occupied tile, redrawing (attempt %d)", j, attempt + 1)
        else:
            raise PartitionError(f"member {j}: every partition had one occupied tile after {max_redraws} redraws")
        clf = clone(template)
        if "random_state" in clf.get_params():
            clf.set_params(random_state=int(rng.integers(2**63 - 1)))
        try:
            clf.fit(X, tiles, sample_weight=weights)
        except DivergenceError as exc:
            raise DivergenceError(f"member {j}: {exc}", epoch=exc.epoch, member=j) from exc
        cell_tile = part.assign(grid_centers)
    return EnsembleMember(part, clf, cell_tile)


class DeepSpace(BaseEstimator):
    """Geolocation by averaging tile classifiers over random Voronoi partitions.

    ``fit(X, y)`` takes binary features ``X`` (n, p) and locations ``y`` as an
    (n, 2) array of (lat, lon). The fitted intensity at location s is

        g(s | x) = (1/J) sum_j q_{j, h_j(s)}(x) / A_{j, h_j(s)}

    where h_j(s) is the tile of partition j containing s. ``normalize=False``
    drops the 1/J factor.

    Parameters
    ----------
    domain : Domain
    classifier : estimator or ClassifierSpec or str, default "deep"
        Prototype cloned for each partition; must expose ``predict_proba``
        and ``classes_`` and accept ``sample_weight`` in ``fit``.
    scheme : PartitionScheme or {"coarse", "fine", "mixed"}
    n_partitions : int
        Number of (partition, classifier) pairs J.
    mc_points : int
        Monte-Carlo points per partition for tile areas.
    metric : {"haversine", "planar"}
    grid_resolution : float
        Degrees per grid cell for argmax and regions.
    n_jobs : int or None
        Worker processes for member fits; results do not depend on it.
    random_state : int or None
    """

    def __init__(self, domain=None, classifier="deep", scheme="mixed", n_partitions=50,
                 mc_points=100_000, metric="haversine", grid_resolution=0.25, normalize=True,
                 max_redraws=10, n_jobs=None, random_state=None):
        self.domain = domain
        self.classifier = classifier
        self.scheme = scheme
        self.n_partitions = n_partitions
        self.mc_points = mc_points
        self.metric = metric
        self.grid_resolution = grid_resolution
        self.normalize = normalize
        self.max_redraws = max_redraws
        self.n_jobs = n_jobs
        self.random_state = random_state

    def _template(self):
        if isinstance(self.classifier, str):
            return ClassifierSpec(self.classifier).build()
        if isinstance(self.classifier, ClassifierSpec):
            return self.classifier.build()
        return self.classifier

    def fit(self, X, y, sample_weight=None):
        if not isinstance(self.domain, Domain):
            raise ValueError("domain must be a Domain")
        if self.n_partitions < 1:
            raise ValueError("n_partitions must be >= 1")
        X = check_binary_X(X)
        coords = check_coords(y, "y")
        if X.shape[0] != len(coords):
            raise ValueError(f"X has {X.shape[0]} rows but y has {len(coords)}")
        if X.shape[0] < 2:
            raise ValueError("need at least two training samples")
        inside = self.domain.contains(coords)
        if not inside.all():
            raise ValueError(f"training location {int(np.flatnonzero(~inside)[0])} lies outside the domain")
        weights = None if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
        scheme = PartitionScheme.from_name(self.scheme)
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> 1)
        self.seed_ = int(seed)
        self.grid_ = make_grid(self.domain, self.grid_resolution)
        template = self._template()
        seqs = [np.random.SeedSequence(self.seed_, spawn_key=(j,)) for j in range(self.n_partitions)]
        args = (X, coords, weights, self.domain, scheme, template, self.grid_.centers,
                self.mc_points, self.metric, self.max_redraws)
        if self.n_jobs in (None, 1):
            members = [_fit_member(j, s, *args) for j, s in enumerate(seqs)]
        else:
            members = Parallel(n_jobs=self.n_jobs)(delayed(_fit_member)(j, s, *args) for j, s in enumerate(seqs))
        for j, mem in enumerate(members):
            logger.debug("member %d: K=%d occupied=%d", j, mem.partition.n_tiles, len(mem.occupied))
        self.members_ = members
        self.n_features_in_ = X.shape[1]
        return self

    # -- surfaces -------------------------------------------------------

    def _scale(self):
        return 1.0 / len(self.members_) if self.normalize else 1.0

    def _tile_values(self, X):
        return [m.tile_values(X) for m in self.members_]

    def _surface_from_values(self, values) -> np.ndarray:
        surf = np.zeros((values[0].shape[0], len(self.grid_)))
        for mem, tv in zip(self.members_, values):
            surf += tv[:, mem.cell_tile]
        return surf * self._scale()

    def _points_from_values(self, values, coords) -> np.ndarray:
        out = np.zeros((values[0].shape[0], len(coords)))
        for mem, tv in zip(self.members_, values):
            out += tv[:, mem.partition.assign(coords)]
        return out * self._scale()

    def _rowwise_from_values(self, values, coords) -> np.ndarray:
        rows = np.arange(len(coords))
        out = np.zeros(len(coords))
        for mem, tv in zip(self.members_, values):
            out += tv[rows, mem.partition.assign(coords)]
        return out * self._scale()

    def density(self, X, coords) -> np.ndarray:
        """Intensity at each location for each query; shape (n_queries, n_locations)."""
        check_is_fitted(self, "members_")
        X = check_binary_X(X, self.n_features_in_)
        coords = check_coords(coords)
        return self._points_from_values(self._tile_values(X), coords)

    def density_grid(self, X) -> np.ndarray:
        """Intensity at every grid cell center; shape (n_queries, n_cells)."""
        check_is_fitted(self, "members_")
        X = check_binary_X(X, self.n_features_in_)
        return np.vstack([
            self._surface_from_values(self._tile_values(X[s:s + _QUERY_CHUNK]))
            for s in range(0, X.shape[0], _QUERY_CHUNK)
        ])

    def predict(self, X) -> np.ndarray:
        """Grid cell center of maximal intensity per query, lowest cell index on ties."""
        surf = self.density_grid(X)
        return self.grid_.centers[np.argmax(surf, axis=1)]

    def prediction_region(self, X, mass=0.9) -> list:
        surf = self.density_grid(X)
        return [region_from_surface(row, self.grid_.cell_area_km2, mass) for row in surf]

    def evaluate(self, X, coords=None, mass=0.9):
        """Point predictions, regions, and (given true coords) errors and coverage in one pass."""
        check_is_fitted(self, "members_")
        X = check_binary_X(X, self.n_features_in_)
        if coords is not None:
            coords = check_coords(coords)
        preds, regions, covered = [], [], []
        for s in range(0, X.shape[0], _QUERY_CHUNK):
            values = self._tile_values(X[s:s + _QUERY_CHUNK])
            surf = self._surface_from_values(values)
            preds.append(self.grid_.centers[np.argmax(surf, axis=1)])
            block = [region_from_surface(r, self.grid_.cell_area_km2, mass) for r in surf]
            regions.extend(block)
            if coords is not None:
                truth = coords[s:s + _QUERY_CHUNK]
                at_truth = self._rowwise_from_values(values, truth)
                covered.extend(bool(v >= r.threshold) for v, r in zip(at_truth, block))
        pred = np.vstack(preds)
        out = {"pred": pred, "regions": regions}
        if coords is not None:
            out["error_km"] = haversine(coords[:, 0], coords[:, 1], pred[:, 0], pred[:, 1])
            out["covered"] = np.array(covered, dtype=bool)
        return out

    def score(self, X, y):
        """Negative median great-circle error in km."""
        coords = check_coords(y)
        pred = self.predict(X)
        return -float(np.median(haversine(coords[:, 0], coords[:, 1], pred[:, 0], pred[:, 1])))


def train_ensemble(ds, scheme, cspec, J, rng, domain, **kwargs) -> DeepSpace:
    """Functional entry point mirroring ``DeepSpace(...).fit`` on a Dataset."""
    model = DeepSpace(domain=domain, classifier=cspec, scheme=scheme, n_partitions=J, random_state=rng, **kwargs)
    return model.fit(ds.X, ds.coords, sample_weight=ds.weights)


def geolocate(model: DeepSpace, x) -> np.ndarray:
    return model.predict(_as_rows(x))[0]


def density(model: DeepSpace, x, s) -> float:
    return float(model.density(_as_rows(x), np.asarray(s, dtype=np.float64).reshape(1, 2))[0, 0])


def prediction_region(model: DeepSpace, x, mass=0.9) -> PredictionRegion:
    return model.prediction_region(_as_rows(x), mass)[0]


def _as_rows(x):
    import scipy.sparse as sp

    if sp.issparse(x):
        return x
    x = np.asarray(x)
    return x.reshape(1, -1) if x.ndim == 1 else x
