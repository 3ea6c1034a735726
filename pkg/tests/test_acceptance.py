"""Acceptance criteria 1-10. Each test records one PASS/FAIL line (see conftest).

Criteria 6-8 share one synthetic benchmark driven through the CLI; the whole
module takes roughly an hour on a single core.
"""
import json
import math
import time
from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin

from deepspace.classifiers import ClassifierSpec, JaccardKNNClassifier, gradient_check
from deepspace.cli import main
from deepspace.domains import conus
from deepspace.ensemble import DeepSpace, PartitionScheme
from deepspace.evaluation import CvConfig, SampleResult, area_dnn_baseline, displacement_km, error_field, run_cv
from deepspace.geometry import EARTH_RADIUS_KM, VoronoiPartition, assign_tile, make_partition, sample_uniform
from deepspace.synth import SyntheticConfig, country_dataset, generate

# -- independent oracles ------------------------------------------------------


def _hav_oracle(lat1, lon1, lat2, lon2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    a = math.sin((p2 - p1) / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(math.radians(lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def _nearest_oracle(point, seeds):
    best, best_d = 0, math.inf
    for i, (lat, lon) in enumerate(seeds):
        d = _hav_oracle(point[0], point[1], lat, lon)
        if d < best_d:
            best, best_d = i, d
    return best


def _knn_oracle(train_sets, y, w, query, k, n_classes):
    dists = []
    q = set(query)
    for i, t in enumerate(train_sets):
        union = len(q | t)
        dists.append((0.0 if union == 0 else 1.0 - len(q & t) / union, i))
    nbrs = [i for _, i in sorted(dists)[:k]]
    votes = [0.0] * n_classes
    for i in nbrs:
        votes[y[i]] += w[i]
    total = sum(votes)
    return [v / total for v in votes]


# -- 1 ------------------------------------------------------------------------


def test_criterion_01_gradient_check(record):
    rng = np.random.default_rng(20)
    t0 = time.perf_counter()
    errors = []
    for i in range(20):
        depth = int(rng.integers(1, 4))
        hidden = tuple(int(h) for h in rng.integers(2, 7, depth))
        errors.append(gradient_check(
            hidden=hidden, n_features=int(rng.integers(2, 8)), n_classes=int(rng.integers(2, 5)),
            n_samples=int(rng.integers(3, 10)), activation=("relu", "logistic")[i % 2], rng=rng,
        ))
    elapsed = time.perf_counter() - t0
    ok = max(errors) <= 1e-4 and elapsed < 10
    record(1, ok, f"max relative gradient error {max(errors):.2e} (<= 1e-4) in {elapsed:.2f} s (< 10 s)")
    assert ok


# -- 2 ------------------------------------------------------------------------


def test_criterion_02_brute_force_oracles(record):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    domain = conus()
    tile_mismatch = 0
    # 1000 query points over partitions small enough for the direct scan and
    # large enough for the tree path; each point checked singly and in batch
    for k in (5, 40, 200, 1000):
        seeds = sample_uniform(domain, rng, k)
        part = VoronoiPartition(seeds, np.ones(k), 100_000)
        pts = sample_uniform(domain, rng, 250)
        batch = part.assign(pts)
        for p, b in zip(pts, batch):
            want = _nearest_oracle(p, seeds)
            tile_mismatch += int(assign_tile(part, p) != want) + int(b != want)
    knn_mismatch = 0
    for case in range(1000):
        n, p = int(rng.integers(2, 60)), int(rng.integers(1, 30))
        Xd = rng.random((n, p)) < rng.uniform(0.05, 0.6)
        y = rng.integers(0, int(rng.integers(2, 6)), n)
        # integer-valued weights keep every partial sum exact
        w = None if case % 2 else rng.integers(1, 6, n).astype(float)
        q = rng.random(p) < 0.3
        clf = JaccardKNNClassifier(n_neighbors=int(rng.integers(1, 30))).fit(sp.csr_matrix(Xd), y, sample_weight=w)
        classes = list(clf.classes_)
        want = _knn_oracle([set(np.flatnonzero(r)) for r in Xd], [classes.index(v) for v in y],
                           np.ones(n) if w is None else w, set(np.flatnonzero(q)),
                           min(clf.n_neighbors, n), len(classes))
        got = clf.predict_proba(sp.csr_matrix(q[None, :]))[0]
        knn_mismatch += int(not np.array_equal(got, np.array(want)))
    elapsed = time.perf_counter() - t0
    ok = tile_mismatch == 0 and knn_mismatch == 0 and elapsed < 30
    record(2, ok, f"assign_tile mismatches {tile_mismatch}/2000 checks, KNN mismatches {knn_mismatch}/1000, "
                  f"{elapsed:.1f} s (< 30 s)")
    assert ok


# -- 3 ------------------------------------------------------------------------


def test_criterion_03_normalization(record):
    domain = conus()
    ds = generate(SyntheticConfig(n=300, p=50, n_informative=10, seed=3), domain)
    kinds = [
        ClassifierSpec("knn"),
        ClassifierSpec("forest", {"n_estimators": 10}),
        ClassifierSpec("shallow", {"hidden": (32,), "epochs": 5}),
        ClassifierSpec("deep", {"hidden": (32, 16, 16), "epochs": 5}),
    ]
    schemes = ["coarse", "fine", "mixed"]
    masses = []
    for i in range(20):
        model = DeepSpace(domain=domain, classifier=kinds[i % 4], scheme=schemes[i % 3], n_partitions=3,
                          random_state=100 + i).fit(ds.X[:250], ds.coords[:250])
        surf = model.density_grid(ds.X[250 + (i % 4) * 10: 260 + (i % 4) * 10])
        masses.extend((surf * model.grid_.cell_area_km2).sum(axis=1).tolist())
    lo, hi = min(masses), max(masses)
    ok = len(masses) == 200 and 0.98 <= lo and hi <= 1.02
    record(3, ok, f"grid mass over 20 ensembles x 10 queries in [{lo:.4f}, {hi:.4f}] (need [0.98, 1.02])")
    assert ok


# -- 4 ------------------------------------------------------------------------


def test_criterion_04_area_consistency(record):
    domain = conus()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        part = make_partition(domain, int(rng.integers(2, 500)), rng, mc_points=100_000)
        worst = max(worst, abs(part.areas.sum() - domain.area_km2) / domain.area_km2)
    ok = worst <= 0.01
    record(4, ok, f"max relative gap between summed tile areas and domain area {worst:.2e} over 50 partitions")
    assert ok


# -- 5 ------------------------------------------------------------------------


class _TileOracle(ClassifierMixin, BaseEstimator):
    """Reads the true location from a one-hot feature and returns its tile with certainty."""

    def __init__(self, locations=None):
        self.locations = locations

    def fit(self, X, y, sample_weight=None):
        self.classes_ = np.unique(y)
        return self

    def predict_proba(self, X):
        X = sp.csr_matrix(X)
        loc = self.locations[X.indices[X.indptr[:-1]]]
        tiles = self.partition_.assign(loc)
        out = np.zeros((X.shape[0], len(self.classes_)))
        out[np.arange(X.shape[0]), np.searchsorted(self.classes_, tiles)] = 1.0
        return out


def test_criterion_05_single_partition_sanity(record):
    domain = conus()
    rng = np.random.default_rng(5)
    locs = sample_uniform(domain, rng, 600)
    X = sp.csr_matrix((np.ones(600), (np.arange(600), np.arange(600))), shape=(600, 600))
    model = DeepSpace(domain=domain, classifier=_TileOracle(locs), scheme=PartitionScheme.fixed(4),
                      n_partitions=1, random_state=5).fit(X[:400], locs[:400])
    member = model.members_[0]
    member.classifier.partition_ = member.partition
    test = np.arange(400, 600)
    truth = member.partition.assign(locs[test])
    res = model.evaluate(X[test], locs[test], mass=0.9)
    in_tile = np.mean(member.partition.assign(res["pred"]) == truth)
    contained = np.mean([np.all(member.cell_tile[r.cells] == t) for r, t in zip(res["regions"], truth)])
    ok = len(member.occupied) == 4 and in_tile == 1.0 and contained == 1.0
    record(5, ok, f"argmax in true tile {100 * in_tile:.1f}% of 200, 0.9-region inside the tile "
                  f"{100 * contained:.1f}%")
    assert ok


# -- 6, 7, 8: synthetic benchmark through the CLI -------------------------------

BENCH_SEED = 11
BENCH_NET = ["--classifier", "deep", "--hidden", "256,128,128", "-J", "50", "--folds", "10"]


def _cv(tmp, data, oracle, tag, scheme, threads, extra=()):
    out = tmp / f"{tag}.json"
    t0 = time.perf_counter()
    rc = main(["cv", "--seed", str(BENCH_SEED), "--data", str(data), "--domain", "conus", "--scheme", scheme,
               "--threads", str(threads), "--oracle", str(oracle), "--out-json", str(out), *extra])
    assert rc == 0, f"cv run {tag} failed"
    text = out.read_text()
    return {"text": text, "metrics": json.loads(text)["reports"][0]["metrics"], "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("bench")
    data = tmp / "bench.csv"
    assert main(["gen", "--seed", "1", "--n", "2000", "--p", "200", "--informative", "30",
                 "--domain", "conus", "--out", str(data)]) == 0
    oracle = f"{data}.config.json"
    return {"tmp": tmp, "data": data, "oracle": oracle, "runs": {}}


def _run(bench, tag, scheme, threads=1, extra=BENCH_NET):
    if tag not in bench["runs"]:
        bench["runs"][tag] = _cv(bench["tmp"], bench["data"], bench["oracle"], tag, scheme, threads, extra)
    return bench["runs"][tag]


@pytest.mark.slow
def test_criterion_06_synthetic_benchmark(bench, record):
    ds_run = _run(bench, "mixed_t1", "mixed")
    knn_run = _run(bench, "knn", "mixed", extra=["--classifier", "knn", "-J", "50", "--folds", "10"])
    m, k = ds_run["metrics"], knn_run["metrics"]
    me, ome, cov, kme = m["median_error_km"], m["oracle_median_error_km"], m["coverage"], k["median_error_km"]
    a, b, c = me <= 2 * ome, 0.85 <= cov <= 0.95, me <= kme
    record(6, a and b and c,
           f"(a) median {me:.1f} km vs 2 x oracle {2 * ome:.1f} km {'ok' if a else 'FAIL'}; "
           f"(b) coverage {cov:.3f} in [0.85, 0.95] {'ok' if b else 'FAIL'}; "
           f"(c) vs Spatial NN {kme:.1f} km {'ok' if c else 'FAIL'}; run {ds_run['seconds'] / 60:.1f} min "
           f"(target < 10 min)")
    assert a and b and c


@pytest.mark.slow
def test_criterion_07_scheme_direction(bench, record):
    fine = _run(bench, "fine", "fine")["metrics"]["coverage"]
    coarse = _run(bench, "coarse", "coarse")["metrics"]["coverage"]
    ok = fine <= coarse + 0.03
    record(7, ok, f"Fine coverage {fine:.3f} <= Coarse coverage {coarse:.3f} + 0.03")
    assert ok


@pytest.mark.slow
def test_criterion_08_determinism(bench, record):
    one = _run(bench, "mixed_t1", "mixed")
    eight = _run(bench, "mixed_t8", "mixed", threads=8)
    ok = one["text"] == eight["text"]
    record(8, ok, f"reports from --threads 1 and --threads 8 with seed {BENCH_SEED} "
                  f"{'identical' if ok else 'differ'} ({len(one['text'])} bytes)")
    assert ok


# -- 9 ------------------------------------------------------------------------


def _res(true, pred, err=None):
    if err is None:
        err = _hav_oracle(*true, *pred)
    return SampleResult("x", 0, true[0], true[1], pred[0], pred[1], err)


def test_criterion_09_error_field(record):
    deg = EARTH_RADIUS_KM * math.pi / 180.0
    rels = []
    # single sample, queried at its own location: due east then due north along the equator/meridian
    for pred, want in (((0.0, 1.0), (deg, 0.0)), ((1.0, 0.0), (0.0, deg))):
        f = error_field([_res((0.0, 0.0), pred)], 100.0, np.array([[0.0, 0.0]]))
        rels += [abs(f.d_east_km[0] - want[0]) / deg, abs(f.d_north_km[0] - want[1]) / deg,
                 abs(f.mean_error_km[0] - deg) / deg]
    # symmetric pair with opposite displacements, queried at the midpoint
    pair = [_res((0.0, -1.0), (0.0, -0.5)), _res((0.0, 1.0), (0.0, 0.5))]
    f = error_field(pair, 100.0, np.array([[0.0, 0.0]]))
    half = deg / 2
    rels += [abs(f.d_east_km[0]) / half, abs(f.d_north_km[0]) / half, abs(f.mean_error_km[0] - half) / half]
    # huge bandwidth: every grid point sees the plain average
    rng = np.random.default_rng(9)
    results = []
    for _ in range(40):
        t = (rng.uniform(38, 42), rng.uniform(-100, -95))
        results.append(_res(t, (t[0] + rng.uniform(0.5, 2.0), t[1] + rng.uniform(0.5, 2.0))))
    grid = np.column_stack([rng.uniform(38, 42, 25), rng.uniform(-100, -95, 25)])
    f = error_field(results, 1e6, grid)
    de, dn = displacement_km([[r.true_lat, r.true_lon] for r in results], [[r.pred_lat, r.pred_lon] for r in results])
    err = np.array([r.error_km for r in results])
    for got, want in ((f.d_east_km, de.mean()), (f.d_north_km, dn.mean()), (f.mean_error_km, err.mean())):
        rels.append(float(np.max(np.abs(got - want)) / abs(want)))
    worst = max(rels)
    ok = worst <= 1e-6 and len(f.points) == 25
    record(9, ok, f"max relative deviation across analytic error-field cases {worst:.2e} (<= 1e-6)")
    assert ok


# -- 10 -----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_country_mode(record):
    ds, areas, domain = country_dataset(n=800, p=120, seed=4)
    spec = ClassifierSpec("deep", {"hidden": (256, 128, 128)})
    cfg = CvConfig(folds=10, scheme="mixed", classifier=spec, n_partitions=50, grid_resolution=0.5, seed=7,
                   country_mode=True)
    dsr = run_cv(ds, domain, cfg, areas=areas)
    dnn = area_dnn_baseline(ds, spec, areas, cfg)
    acc, base = dsr.metrics["area_accuracy"], dnn.metrics["area_accuracy"]
    counts = Counter(s.area_label for s in ds.samples)
    rows_ok = True
    for rep in (dsr, dnn):
        conf = rep.metrics["confusion"]
        sums = np.asarray(conf["matrix"]).sum(axis=1)
        rows_ok &= all(int(sums[i]) == counts.get(lab, 0) for i, lab in enumerate(conf["labels"]))
    ok = acc >= base - 0.05 and rows_ok and "median_error_km" not in dsr.metrics
    record(10, ok, f"DeepSpace country accuracy {100 * acc:.1f}% vs Area DNN {100 * base:.1f}% - 5 points; "
                   f"confusion row sums {'match' if rows_ok else 'DO NOT match'} per-country counts")
    assert ok
