"""Cross-validated evaluation: errors, region coverage, area matching, error fields."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from sklearn.metrics import confusion_matrix as _sk_confusion

from .classifiers import ClassifierSpec
from .data import AreaTable, Dataset, compute_weights
from .ensemble import DeepSpace, PartitionScheme
from .geometry import (
    Domain,
    haversine,
    initial_bearing,
    make_grid,
    points_in_polygons,
    sample_boundary,
    sphere_centroid,
)

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass
class CvConfig:
    folds: int = 10
    scheme: str = "mixed"
    classifier: ClassifierSpec = field(default_factory=ClassifierSpec)
    n_partitions: int = 50
    grid_resolution: float = 0.25
    mass: float = 0.9
    seed: int = 0
    mc_points: int = 100_000
    metric: str = "haversine"
    n_jobs: Optional[int] = None
    country_mode: bool = False

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if not 0 < self.mass < 1:
            raise ValueError("mass must lie in (0, 1)")
        if isinstance(self.classifier, dict):
            self.classifier = ClassifierSpec.from_dict(self.classifier)
        elif isinstance(self.classifier, str):
            self.classifier = ClassifierSpec(self.classifier)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classifier"] = self.classifier.to_dict()
        d.pop("n_jobs")
        return d

    def fold_seed(self, fold: int) -> int:
        return int(np.random.SeedSequence(self.seed, spawn_key=(1, fold)).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class SampleResult:
    id: str
    fold: int
    true_lat: float
    true_lon: float
    pred_lat: float
    pred_lon: float
    error_km: float
    covered: Optional[bool] = None
    region_area_km2: Optional[float] = None
    true_label: Optional[str] = None
    pred_label: Optional[str] = None
    matches: dict = field(default_factory=dict)


@dataclass
class FoldResult:
    fold: int
    train_ids: list
    samples: list


@dataclass
class CvReport:
    config: dict
    folds: list
    metrics: dict

    @property
    def samples(self) -> list:
        return [s for f in self.folds for s in f.samples]

    def to_json(self, path=None) -> str:
        payload = {"version": REPORT_VERSION, "config": self.config, "metrics": self.metrics}
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def write_samples_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "fold", "true_lat", "true_lon", "pred_lat", "pred_lon", "error_km", "covered",
                        "true_label", "pred_label"])
            for s in self.samples:
                w.writerow([s.id, s.fold, repr(s.true_lat), repr(s.true_lon), repr(s.pred_lat), repr(s.pred_lon),
                            repr(s.error_km), "" if s.covered is None else int(s.covered),
                            s.true_label or "", s.pred_label or ""])


def kfold_split(n: int, folds: int, rng) -> np.ndarray:
    """Fold index per sample: a random permutation dealt round-robin, sizes differ by at most one."""
    if folds < 2 or n < folds:
        raise ValueError(f"need n >= folds >= 2 (n={n}, folds={folds})")
    rng = np.random.default_rng(rng)
    assign = np.empty(n, dtype=np.int64)
    assign[rng.permutation(n)] = np.arange(n) % folds
    return assign


def _area_polygons(areas: AreaTable, label):
    polys = areas.polygon(label)
    if not polys:
        return None
    return [tuple(np.asarray(r, dtype=np.float64) for r in poly) for poly in polys]


def area_match(predicted, truth_labels, areas: Optional[AreaTable]) -> dict:
    """Per level: True/False when the true area has a polygon, None when not evaluable."""
    out = {}
    if areas is None:
        return out
    for level in areas.levels:
        out[level] = None
    for label in truth_labels or ():
        if label not in areas:
            continue
        level = areas[label].level
        polys = _area_polygons(areas, label)
        if polys is None:
            continue
        out[level] = bool(points_in_polygons(np.asarray(predicted, dtype=np.float64).reshape(1, 2), polys)[0])
    return out


def locate_area(points, areas: AreaTable, level: str) -> list:
    """Label of the first area at ``level`` containing each point, or None."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    found = [None] * len(points)
    for row in areas.rows:
        if row.level != level:
            continue
        polys = _area_polygons(areas, row.label)
        if polys is None:
            continue
        inside = points_in_polygons(points, polys)
        for i in np.flatnonzero(inside):
            if found[i] is None:
                found[i] = row.label
    return found


def area_centroid(areas: AreaTable, label) -> np.ndarray:
    """Spherical centroid of boundary points of the area's outer rings."""
    polys = _area_polygons(areas, label)
    if polys is None:
        raise ValueError(f"area {label!r} has no polygon")
    pts = np.vstack([sample_boundary(poly[0]) for poly in polys])
    return sphere_centroid(pts)


def confusion_matrix(true_labels, predicted_labels, labels=None):
    """Counts with rows = true label, columns = predicted label. Returns (labels, matrix)."""
    true_labels = ["" if t is None else str(t) for t in true_labels]
    predicted_labels = ["" if p is None else str(p) for p in predicted_labels]
    if labels is None:
        labels = sorted(set(true_labels) | set(predicted_labels))
    return list(labels), _sk_confusion(true_labels, predicted_labels, labels=list(labels))


def _primary_level(ds: Dataset, areas: Optional[AreaTable]):
    if areas is None:
        return None
    for s in ds.samples:
        for lab in s.area_labels:
            if lab in areas:
                return areas[lab].level
    return areas.levels[0] if areas.rows else None


def _truth_at_level(sample, areas, level):
    for lab in sample.area_labels:
        if lab in areas and areas[lab].level == level:
            return lab
    return None


def _summarize(samples, areas, country_mode, level, per_fold):
    errors = np.array([s.error_km for s in samples])
    metrics = {"n": len(samples)}
    if not country_mode:
        metrics["median_error_km"] = float(np.median(errors))
        metrics["fold_error_quartiles_km"] = [
            [float(q) for q in np.percentile([s.error_km for s in f], [25, 50, 75])] for f in per_fold
        ]
    cov = [s.covered for s in samples if s.covered is not None]
    if cov:
        metrics["coverage"] = float(np.mean(cov))
    matches = {}
    if areas is not None:
        for lv in areas.levels:
            vals = [s.matches.get(lv) for s in samples if s.matches.get(lv) is not None]
            matches[lv] = float(np.mean(vals)) if vals else None
    metrics["area_match"] = matches
    if level is not None:
        truth = [s.true_label for s in samples]
        pred = [s.pred_label for s in samples]
        labeled = [(t, p) for t, p in zip(truth, pred) if t is not None]
        if labeled:
            metrics["area_accuracy"] = float(np.mean([t == p for t, p in labeled]))
            labels, mat = confusion_matrix([t for t, _ in labeled], [p for _, p in labeled])
            metrics["confusion"] = {"labels": labels, "matrix": mat.tolist()}
    return metrics


def run_cv(ds: Dataset, domain: Domain, config: CvConfig, areas: Optional[AreaTable] = None,
           oracle=None) -> CvReport:
    """Ten-fold (by default) cross-validation of the partition ensemble.

    ``oracle`` may be a synthetic ``TaxonField``; its Bayes posterior is scored
    on the same held-out samples and reported next to the model.
    """
    n = len(ds)
    if n < config.folds:
        raise ValueError(f"need at least {config.folds} samples, got {n}")
    coords_all = ds.coords
    if np.ptp(coords_all[:, 0]) == 0 and np.ptp(coords_all[:, 1]) == 0:
        logger.warning("all samples share one location; errors are degenerate")
    assign = kfold_split(n, config.folds, np.random.SeedSequence(config.seed, spawn_key=(0,)))
    X_all = ds.X
    level = _primary_level(ds, areas)
    scheme = PartitionScheme.from_name(config.scheme)
    oracle_eval = None
    if oracle is not None:
        from .synth import BayesOracle

        oracle_eval = BayesOracle(oracle, make_grid(domain, config.grid_resolution))
    folds, oracle_err, oracle_cov = [], [], []
    for f in range(config.folds):
        test = np.flatnonzero(assign == f)
        train = np.flatnonzero(assign != f)
        train_ds = ds.subset(train)
        if areas is not None:
            train_ds = compute_weights(train_ds, areas)
        model = DeepSpace(domain=domain, classifier=config.classifier, scheme=scheme,
                          n_partitions=config.n_partitions, mc_points=config.mc_points, metric=config.metric,
                          grid_resolution=config.grid_resolution, n_jobs=config.n_jobs,
                          random_state=config.fold_seed(f))
        try:
            model.fit(train_ds.X, train_ds.coords, sample_weight=train_ds.weights)
        except Exception as exc:
            raise type(exc)(f"fold {f}: {exc}") from exc
        res = model.evaluate(X_all[test], coords_all[test], mass=config.mass)
        pred_labels = locate_area(res["pred"], areas, level) if level is not None else [None] * len(test)
        samples = []
        for i, idx in enumerate(test):
            s = ds.samples[idx]
            samples.append(SampleResult(
                id=s.id, fold=f, true_lat=s.lat, true_lon=s.lon,
                pred_lat=float(res["pred"][i, 0]), pred_lon=float(res["pred"][i, 1]),
                error_km=float(res["error_km"][i]), covered=bool(res["covered"][i]),
                region_area_km2=res["regions"][i].area_km2,
                true_label=_truth_at_level(s, areas, level) if level else None,
                pred_label=pred_labels[i],
                matches=area_match(res["pred"][i], s.area_labels, areas),
            ))
        folds.append(FoldResult(f, [ds.samples[i].id for i in train], samples))
        if oracle_eval is not None:
            o = oracle_eval.evaluate(X_all[test], coords_all[test], config.mass)
            oracle_err.extend(o["error_km"].tolist())
            oracle_cov.extend(o["covered"].tolist())
        logger.info("fold %d: n_test=%d median_error=%.1f km", f, len(test), np.median(res["error_km"]))
    all_samples = [s for fr in folds for s in fr.samples]
    metrics = _summarize(all_samples, areas, config.country_mode, level, [fr.samples for fr in folds])
    metrics["seeds"] = scheme.name.capitalize()
    metrics["model"] = config.classifier.model_name
    if oracle_eval is not None:
        metrics["oracle_median_error_km"] = float(np.median(oracle_err))
        metrics["oracle_coverage"] = float(np.mean(oracle_cov))
    return CvReport(config.to_dict(), folds, metrics)


def area_dnn_baseline(ds: Dataset, cspec: ClassifierSpec, areas: AreaTable, config: CvConfig) -> CvReport:
    """Classify the area of origin directly and predict the area's centroid.

    Uses the same fold assignment as ``run_cv``. No prediction regions, so no
    coverage is reported.
    """
    level = _primary_level(ds, areas)
    truth = []
    for s in ds.samples:
        lab = _truth_at_level(s, areas, level)
        if lab is None:
            raise ValueError(f"sample {s.id!r} has no area label at level {level!r}")
        truth.append(lab)
    truth = np.array(truth, dtype=object)
    assign = kfold_split(len(ds), config.folds, np.random.SeedSequence(config.seed, spawn_key=(0,)))
    X_all, coords = ds.X, ds.coords
    centroids = {}
    folds = []
    for f in range(config.folds):
        test = np.flatnonzero(assign == f)
        train = np.flatnonzero(assign != f)
        train_ds = compute_weights(ds.subset(train), areas)
        clf = cspec.build()
        if "random_state" in clf.get_params():
            clf.set_params(random_state=config.fold_seed(f))
        clf.fit(train_ds.X, truth[train].astype(str), sample_weight=train_ds.weights)
        pred_lab = clf.predict(X_all[test])
        samples = []
        for i, idx in enumerate(test):
            lab = str(pred_lab[i])
            if lab not in centroids:
                centroids[lab] = area_centroid(areas, lab)
            c = centroids[lab]
            s = ds.samples[idx]
            samples.append(SampleResult(
                id=s.id, fold=f, true_lat=s.lat, true_lon=s.lon, pred_lat=float(c[0]), pred_lon=float(c[1]),
                error_km=float(haversine(s.lat, s.lon, c[0], c[1])), true_label=truth[idx], pred_label=lab,
                matches=area_match(c, s.area_labels, areas),
            ))
        folds.append(FoldResult(f, [ds.samples[i].id for i in train], samples))
    all_samples = [s for fr in folds for s in fr.samples]
    metrics = _summarize(all_samples, areas, config.country_mode, level, [fr.samples for fr in folds])
    metrics["seeds"] = "None"
    metrics["model"] = f"{(level or 'area').capitalize()} DNN"
    return CvReport({**config.to_dict(), "baseline": "area_dnn", "classifier": cspec.to_dict()}, folds, metrics)


@dataclass
class ErrorField:
    points: np.ndarray
    d_east_km: np.ndarray
    d_north_km: np.ndarray
    mean_error_km: np.ndarray
    bandwidth_km: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lat", "lon", "d_east_km", "d_north_km", "mean_error_km"])
            for (lat, lon), e, nn, m in zip(self.points, self.d_east_km, self.d_north_km, self.mean_error_km):
                w.writerow([repr(float(lat)), repr(float(lon)), repr(float(e)), repr(float(nn)), repr(float(m))])


def displacement_km(true, pred):
    """East/north components (km) of the great-circle step from true to predicted."""
    true = np.asarray(true, dtype=np.float64).reshape(-1, 2)
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 2)
    d = haversine(true[:, 0], true[:, 1], pred[:, 0], pred[:, 1])
    theta = initial_bearing(true[:, 0], true[:, 1], pred[:, 0], pred[:, 1])
    return d * np.sin(theta), d * np.cos(theta)


def error_field(results, bandwidth_km: float, grid) -> ErrorField:
    """Gaussian-kernel smoothed displacement and error at each grid point.

    ``results`` is a sequence of SampleResult (or a CvReport); ``grid`` is a Grid
    or an (m, 2) array of (lat, lon). Points whose total kernel weight is below
    1e-6 of the largest are dropped.
    """
    if bandwidth_km <= 0:
        raise ValueError("bandwidth must be positive")
    if isinstance(results, CvReport):
        results = results.samples
    if not results:
        raise ValueError("need at least one result")
    pts = getattr(grid, "centers", grid)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    true = np.array([[r.true_lat, r.true_lon] for r in results])
    pred = np.array([[r.pred_lat, r.pred_lon] for r in results])
    err = np.array([r.error_km for r in results])
    de, dn = displacement_km(true, pred)
    d = haversine(pts[:, 0:1], pts[:, 1:2], true[None, :, 0], true[None, :, 1])
    w = np.exp(-(d**2) / (2.0 * bandwidth_km**2))
    total = w.sum(axis=1)
    keep = total >= 1e-6 * total.max()
    w, total = w[keep], total[keep]
    return ErrorField(pts[keep], (w @ de) / total, (w @ dn) / total, (w @ err) / total, float(bandwidth_km))


def metrics_table_rows(reports, levels=None) -> list:
    """Rows in the layout Seeds, Model, ME, COV, <area-match levels> (percentages)."""
    if levels is None:
        levels = []
        for r in reports:
            for lv in r.metrics.get("area_match", {}):
                if lv not in levels:
                    levels.append(lv)
    header = ["Seeds", "Model", "ME", "COV"] + [lv.capitalize() for lv in levels]
    country = any("median_error_km" not in r.metrics for r in reports)
    if country:
        header = ["Seeds", "Model", "Accuracy"] + [lv.capitalize() for lv in levels]
    rows = [header]
    for r in reports:
        m = r.metrics
        row = [m.get("seeds", ""), m.get("model", "")]
        if country:
            acc = m.get("area_accuracy")
            row.append("" if acc is None else f"{100 * acc:.1f}")
        else:
            row.append(f"{m['median_error_km']:.1f}")
            row.append("-" if "coverage" not in m else f"{100 * m['coverage']:.1f}")
        for lv in levels:
            v = m.get("area_match", {}).get(lv)
            row.append("-" if v is None else f"{100 * v:.1f}")
        rows.append(row)
    if any("oracle_median_error_km" in r.metrics for r in reports):
        rows[0].append("Oracle ME")
        for row, r in zip(rows[1:], reports):
            v = r.metrics.get("oracle_median_error_km")
            row.append("" if v is None else f"{v:.1f}")
    return rows


def write_metrics_csv(reports, path, levels=None):
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(metrics_table_rows(reports, levels))
