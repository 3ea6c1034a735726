import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import BaseEstimator

from deepspace.classifiers import JaccardKNNClassifier
from deepspace.domains import unit_square
from deepspace.ensemble import (
    DeepSpace,
    EnsembleMember,
    PartitionScheme,
    density,
    geolocate,
    prediction_region,
    region_from_surface,
)
from deepspace.exceptions import PartitionError
from deepspace.geometry import Domain, VoronoiPartition, haversine


class FixedProba(BaseEstimator):
    """Returns the same class distribution for every query."""

    def __init__(self, proba=None):
        self.proba = proba

    def fit(self, X, y, sample_weight=None):
        self.classes_ = np.unique(y)
        return self

    def predict_proba(self, X):
        k = len(self.classes_)
        p = np.full(k, 1.0 / k) if self.proba is None else np.asarray(self.proba, dtype=float)[:k]
        return np.tile(p / p.sum(), (X.shape[0], 1))


def _box():
    return Domain.from_bbox(0.0, 4.0, 0.0, 4.0, name="box")


def _one_hot_data(n=30, seed=0):
    # each sample carries one private feature, so 1-NN recovers its own tile exactly
    rng = np.random.default_rng(seed)
    coords = np.column_stack([rng.uniform(0.1, 3.9, n), rng.uniform(0.1, 3.9, n)])
    return sp.identity(n, format="csr"), coords


class TestScheme:
    def test_k_rounding(self):
        rng = np.random.default_rng(0)
        assert PartitionScheme.coarse().draw_k(1301, rng) == 65
        assert PartitionScheme.fine().draw_k(1301, rng) == 651
        assert PartitionScheme.coarse().draw_k(10, rng) == 2

    def test_mixed_fractions(self):
        rng = np.random.default_rng(1)
        ks = {PartitionScheme.mixed().draw_k(1000, rng) for _ in range(500)}
        assert ks == {50 * i for i in range(1, 11)}

    def test_names(self):
        assert PartitionScheme.from_name("fixed7").draw_k(100, None) == 7
        with pytest.raises(ValueError):
            PartitionScheme.from_name("huge")
        with pytest.raises(ValueError):
            PartitionScheme.fixed(1)


def test_member_density_is_q_over_area():
    part = VoronoiPartition(np.array([[1.0, 1.0], [3.0, 3.0]]), np.array([100.0, 300.0]), 10)
    clf = FixedProba([0.5, 0.5]).fit(None, [0, 1])
    tv = EnsembleMember(part, clf, np.array([0, 1])).tile_values(sp.csr_matrix((1, 1)))
    np.testing.assert_allclose(tv, [[0.5 / 100.0, 0.5 / 300.0]], rtol=1e-15)


def test_unoccupied_tile_is_zero():
    part = VoronoiPartition(np.array([[1.0, 1.0], [3.0, 3.0], [1.0, 3.0]]), np.ones(3), 10)
    clf = FixedProba().fit(None, [0, 2])
    tv = EnsembleMember(part, clf, np.arange(3)).tile_values(sp.csr_matrix((1, 1)))
    np.testing.assert_array_equal(tv, [[0.5, 0.0, 0.5]])


@pytest.fixture(scope="module")
def one_hot_model():
    X, coords = _one_hot_data()
    model = DeepSpace(_box(), JaccardKNNClassifier(n_neighbors=1), scheme="fixed6", n_partitions=4,
                      mc_points=20000, grid_resolution=0.25, random_state=3)
    return model.fit(X, coords), X, coords


def test_one_hot_density_matches_tile_areas(one_hot_model):
    model, X, coords = one_hot_model
    for i in range(5):
        want = np.mean([1.0 / m.partition.areas[m.partition.assign(coords[i:i + 1])[0]] for m in model.members_])
        assert density(model, X[i], coords[i]) == pytest.approx(want, rel=1e-12)


def test_grid_equals_pointwise(one_hot_model):
    model, X, _ = one_hot_model
    grid = model.density_grid(X[:4])
    point = model.density(X[:4], model.grid_.centers)
    np.testing.assert_allclose(grid, point, rtol=0, atol=1e-12 * grid.max())


def test_surface_integrates_to_about_one(one_hot_model):
    model, X, _ = one_hot_model
    mass = model.density_grid(X) @ model.grid_.cell_area_km2
    assert np.all(np.abs(mass - 1) < 0.05)


def test_normalize_false_scales_by_j(one_hot_model):
    model, X, _ = one_hot_model
    raw = DeepSpace(**{**model.get_params(deep=False), "normalize": False})
    raw.members_, raw.grid_, raw.n_features_in_ = model.members_, model.grid_, model.n_features_in_
    np.testing.assert_allclose(raw.density_grid(X[:3]), 4 * model.density_grid(X[:3]), rtol=1e-14)
    np.testing.assert_array_equal(raw.predict(X[:3]), model.predict(X[:3]))


def test_functional_wrappers(one_hot_model):
    model, X, _ = one_hot_model
    np.testing.assert_array_equal(geolocate(model, X[0]), model.predict(X[:1])[0])
    assert len(prediction_region(model, X[0], 0.5)) == len(model.prediction_region(X[:1], 0.5)[0])


def test_nested_regions(one_hot_model):
    model, X, _ = one_hot_model
    small, big = model.prediction_region(X[:1], 0.5)[0], model.prediction_region(X[:1], 0.9)[0]
    assert set(small.cells) <= set(big.cells)
    assert small.achieved_mass >= 0.5 and big.achieved_mass >= 0.9


def test_full_mass_is_whole_support():
    values = np.array([3.0, 0.0, 1.0, 2.0])
    region = region_from_surface(values, np.ones(4), 1.0)
    assert set(region.cells) == {0, 2, 3}
    assert region.achieved_mass == 1.0


class TestRegionFromSurface:
    def test_prefix_and_threshold(self):
        values = np.array([0.1, 0.4, 0.2, 0.3])
        region = region_from_surface(values, np.ones(4), 0.6)
        assert list(region.cells) == [1, 3] and region.threshold == 0.3
        assert region.achieved_mass == pytest.approx(0.7)

    def test_ties_at_threshold_included(self):
        values = np.array([0.25, 0.25, 0.25, 0.25])
        region = region_from_surface(values, np.ones(4), 0.5)
        assert len(region) == 4 and region.achieved_mass == 1.0

    def test_cell_areas_weight_mass(self):
        values = np.array([2.0, 1.0])
        region = region_from_surface(values, np.array([1.0, 8.0]), 0.5)
        assert set(region.cells) == {0, 1}
        assert region.area_km2 == 9.0

    def test_bad_mass(self):
        with pytest.raises(ValueError):
            region_from_surface(np.ones(2), np.ones(2), 0.0)


def test_argmax_ties_take_lowest_cell():
    model = DeepSpace(_box(), FixedProba(), scheme="fixed2", n_partitions=1, mc_points=2000,
                      grid_resolution=1.0, random_state=0)
    X, coords = _one_hot_data(10)
    model.fit(X, coords)
    surf = model.density_grid(X[:1])[0]
    top = np.flatnonzero(surf == surf.max())
    np.testing.assert_array_equal(model.predict(X[:1])[0], model.grid_.centers[top[0]])


def test_argmax_invariant_to_weight_scale():
    X, coords = _one_hot_data(20, seed=2)
    kw = dict(domain=_box(), classifier=JaccardKNNClassifier(3), scheme="fixed4", n_partitions=3,
              mc_points=5000, grid_resolution=0.5, random_state=1)
    w = np.linspace(0.5, 2.0, 20)
    a = DeepSpace(**kw).fit(X, coords, sample_weight=w)
    b = DeepSpace(**kw).fit(X, coords, sample_weight=10 * w)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))


def test_deterministic_for_seed():
    X, coords = _one_hot_data(20, seed=3)
    kw = dict(domain=_box(), classifier="knn", scheme="mixed", n_partitions=3, mc_points=5000,
              grid_resolution=0.5, random_state=9)
    a, b = DeepSpace(**kw).fit(X, coords), DeepSpace(**kw).fit(X, coords)
    assert a.density_grid(X).tobytes() == b.density_grid(X).tobytes()
    c = DeepSpace(**{**kw, "n_jobs": 2}).fit(X, coords)
    assert a.density_grid(X).tobytes() == c.density_grid(X).tobytes()


def test_single_occupied_tile_raises():
    # all samples at one point: every partition puts them in the same tile
    X = sp.identity(5, format="csr")
    coords = np.tile([[0.5, 0.5]], (5, 1))
    model = DeepSpace(unit_square(), "knn", scheme="fixed2", n_partitions=2, mc_points=1000,
                      max_redraws=2, random_state=0)
    with pytest.raises(PartitionError, match="member 0"):
        model.fit(X, coords)


def test_evaluate_matches_parts(one_hot_model):
    model, X, coords = one_hot_model
    out = model.evaluate(X[:6], coords[:6])
    pred = model.predict(X[:6])
    np.testing.assert_array_equal(out["pred"], pred)
    np.testing.assert_allclose(out["error_km"], haversine(coords[:6, 0], coords[:6, 1], pred[:, 0], pred[:, 1]))
    at_truth = np.diag(model.density(X[:6], coords[:6]))
    want = [t >= r.threshold for t, r in zip(at_truth, model.prediction_region(X[:6]))]
    assert list(out["covered"]) == want


def test_fit_rejects_points_outside_domain():
    X, coords = _one_hot_data(5)
    coords[0] = [10.0, 10.0]
    with pytest.raises(ValueError, match="outside"):
        DeepSpace(_box(), "knn", n_partitions=1, random_state=0).fit(X, coords)
