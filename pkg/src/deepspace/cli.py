"""Command-line entry point: gen, train, predict, cv, export-surface, export-error-field."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .classifiers import ClassifierSpec
from .data import AreaTable, compute_weights, load_samples, save_samples
from .domains import load_domain
from .ensemble import DeepSpace, PartitionScheme
from .evaluation import (
    CvConfig,
    SampleResult,
    area_dnn_baseline,
    error_field,
    run_cv,
    write_metrics_csv,
)
from .exceptions import DeepSpaceError
from .geometry import make_grid
from .io import load_model, save_model, surface_geojson, write_surface_csv
from .synth import SyntheticConfig, generate, make_field

logger = logging.getLogger("deepspace")

CONFIG_VERSION = 1

# Defaults applied after --config, so explicit flags win over the file and the file over these.
DEFAULTS = {
    "gen": {"n": 2000, "p": 200, "informative": 30, "domain": "conus"},
    "train": {"domain": "conus", "scheme": "mixed", "classifier": "deep", "partitions": 50,
              "grid_resolution": 0.25, "mc_points": 100_000, "metric": "haversine"},
    "cv": {"domain": "conus", "scheme": "mixed", "classifier": "deep", "partitions": 50, "folds": 10,
           "grid_resolution": 0.25, "mc_points": 100_000, "metric": "haversine", "mass": 0.9},
    "predict": {"mass": 0.9},
    "export-surface": {"format": None},
    "export-error-field": {"bandwidth": 100.0, "grid_resolution": 0.25, "domain": "conus"},
}


def _add_common(sp, seed=True):
    sp.add_argument("--config", help="JSON file of option values (with \"version\": 1); flags override it")
    if seed:
        sp.add_argument("--seed", type=int, help="master random seed (required, here or in --config)")
    sp.add_argument("--threads", type=int, help="worker processes (default: available cores)")
    sp.add_argument("-v", "--verbose", action="count", default=0)


def _add_model_opts(sp):
    sp.add_argument("--domain", help="built-in domain name or GeoJSON path")
    sp.add_argument("--scheme", help="coarse, fine, mixed, or fixedK (e.g. fixed40)")
    sp.add_argument("--classifier", choices=["knn", "forest", "shallow", "deep"])
    sp.add_argument("--hidden", type=lambda s: [int(v) for v in s.split(",")], help="comma-separated widths")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--dropout", type=float)
    sp.add_argument("--partitions", "-J", type=int, help="number of partitions J")
    sp.add_argument("--grid-resolution", type=float, help="grid cell size in degrees")
    sp.add_argument("--mc-points", type=int)
    sp.add_argument("--metric", choices=["haversine", "planar"])
    sp.add_argument("--areas", help="area table CSV (area_label,population,polygon_id[,level])")
    sp.add_argument("--area-polygons", help="GeoJSON of area polygons")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepspace", description="Geolocation from binary features "
                                     "by averaging classifiers over random Voronoi partitions.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen", help="generate a synthetic dataset and its generator config")
    _add_common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--informative", type=int)
    sp.add_argument("--domain")
    sp.add_argument("--out", required=True, help="dataset CSV to write")
    sp.add_argument("--out-config", help="generator config JSON (default: <out>.config.json)")

    sp = sub.add_parser("train", help="fit an ensemble and write a model file")
    _add_common(sp)
    _add_model_opts(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="model file to write")

    sp = sub.add_parser("predict", help="point predictions and prediction regions for query samples")
    _add_common(sp, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--queries", required=True, help="sample CSV; lat/lon may be blank")
    sp.add_argument("--mass", type=float, help="prediction-region mass (default 0.9)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--surface-dir", help="also write one surface CSV per query here")

    sp = sub.add_parser("cv", help="k-fold cross-validation with metric tables")
    _add_common(sp)
    _add_model_opts(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--folds", type=int)
    sp.add_argument("--mass", type=float)
    sp.add_argument("--oracle", help="generator config JSON; adds Bayes-oracle columns")
    sp.add_argument("--country-mode", action="store_true", help="score area labels only, no distance error")
    sp.add_argument("--area-dnn", action="store_true", help="add the area-classifier centroid baseline row")
    sp.add_argument("--out-json", required=True)
    sp.add_argument("--out-csv")
    sp.add_argument("--out-samples", help="per-sample predictions CSV")
    sp.add_argument("--out-error-field", help="error-field CSV")
    sp.add_argument("--bandwidth", type=float, default=100.0, help="error-field kernel bandwidth in km")

    sp = sub.add_parser("export-surface", help="write intensity surfaces for query samples")
    _add_common(sp, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--queries", required=True)
    sp.add_argument("--id", action="append", help="query id to export (repeatable; default all)")
    sp.add_argument("--format", choices=["csv", "geojson"], help="default from --out suffix")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("export-error-field", help="smooth per-sample CV results into an error field")
    _add_common(sp, seed=False)
    sp.add_argument("--samples", required=True, help="per-sample CSV written by cv --out-samples")
    sp.add_argument("--bandwidth", type=float)
    sp.add_argument("--domain")
    sp.add_argument("--grid-resolution", type=float)
    sp.add_argument("--out", required=True)
    return parser


def _resolve(args, parser):
    """Merge --config values and defaults into ``args`` in place."""
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        version = cfg.pop("version", None)
        if version != CONFIG_VERSION:
            parser.error(f"{args.config}: config version must be {CONFIG_VERSION}, got {version!r}")
    cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    for key, value in {**DEFAULTS.get(args.command, {}), **cfg}.items():
        if not hasattr(args, key):
            parser.error(f"unknown config key {key!r} for {args.command}")
        if getattr(args, key) is None:
            setattr(args, key, value)
    if hasattr(args, "seed") and args.seed is None:
        parser.error("--seed is required (no wall-clock seeding)")
    if args.threads is None:
        args.threads = os.cpu_count() or 1
    if args.threads < 1:
        parser.error("--threads must be >= 1")


def _classifier_spec(args) -> ClassifierSpec:
    params = {}
    for key in ("hidden", "epochs", "batch_size", "dropout"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    return ClassifierSpec(args.classifier, params)


def _areas(args):
    if args.areas is None:
        if args.area_polygons is not None:
            raise DeepSpaceError("--area-polygons needs --areas")
        return None
    return AreaTable.load(args.areas, args.area_polygons)


def cmd_gen(args):
    domain = load_domain(args.domain)
    cfg = SyntheticConfig(p=args.p, n=args.n, domain=args.domain, n_informative=args.informative, seed=args.seed)
    ds = generate(cfg, domain)
    save_samples(ds, args.out)
    cfg.save(args.out_config or f"{args.out}.config.json")
    logger.info("wrote %d samples with p=%d to %s", len(ds), ds.p, args.out)


def cmd_train(args):
    domain = load_domain(args.domain)
    ds = load_samples(args.data, domain)
    areas = _areas(args)
    if areas is not None:
        ds = compute_weights(ds, areas)
    model = DeepSpace(domain=domain, classifier=_classifier_spec(args), scheme=PartitionScheme.from_name(args.scheme),
                      n_partitions=args.partitions, mc_points=args.mc_points, metric=args.metric,
                      grid_resolution=args.grid_resolution, n_jobs=args.threads, random_state=args.seed)
    model.fit(ds.X, ds.coords, sample_weight=ds.weights)
    for j, mem in enumerate(model.members_):
        diag = ""
        if hasattr(mem.classifier, "final_loss_"):
            diag = f" loss {mem.classifier.initial_loss_:.4f} -> {mem.classifier.final_loss_:.4f}"
        logger.info("member %d: K=%d occupied=%d%s", j, mem.partition.n_tiles, len(mem.occupied), diag)
    logger.info("trained %d members", len(model.members_))
    save_model(model, args.out)


def _load_queries(path, model):
    return load_samples(path, p=model.n_features_in_, allow_missing_coords=True)


def cmd_predict(args):
    model = load_model(args.model)
    qs = _load_queries(args.queries, model)
    res = model.evaluate(qs.X, mass=args.mass)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "pred_lat", "pred_lon", "region_mass", "region_cell_count"])
        for sid, (lat, lon), reg in zip(qs.ids, res["pred"], res["regions"]):
            w.writerow([sid, repr(float(lat)), repr(float(lon)), repr(reg.achieved_mass), len(reg)])
    if args.surface_dir:
        out = Path(args.surface_dir)
        out.mkdir(parents=True, exist_ok=True)
        surf = model.density_grid(qs.X)
        for sid, row in zip(qs.ids, surf):
            write_surface_csv(out / f"{sid}.csv", model.grid_, row)


def cmd_cv(args):
    domain = load_domain(args.domain)
    ds = load_samples(args.data, domain)
    areas = _areas(args)
    if args.country_mode and areas is None:
        raise DeepSpaceError("--country-mode needs --areas and --area-polygons")
    config = CvConfig(folds=args.folds, scheme=args.scheme, classifier=_classifier_spec(args),
                      n_partitions=args.partitions, grid_resolution=args.grid_resolution, mass=args.mass,
                      seed=args.seed, mc_points=args.mc_points, metric=args.metric, n_jobs=args.threads,
                      country_mode=args.country_mode)
    oracle = None
    if args.oracle:
        oracle = make_field(SyntheticConfig.load(args.oracle), domain)
    reports = [run_cv(ds, domain, config, areas=areas, oracle=oracle)]
    if args.area_dnn:
        if areas is None:
            raise DeepSpaceError("--area-dnn needs --areas and --area-polygons")
        reports.append(area_dnn_baseline(ds, ClassifierSpec("deep", _classifier_spec(args).params), areas, config))
    payload = {"version": 1, "reports": [json.loads(r.to_json()) for r in reports]}
    with open(args.out_json, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if args.out_csv:
        write_metrics_csv(reports, args.out_csv)
    if args.out_samples:
        reports[0].write_samples_csv(args.out_samples)
    if args.out_error_field:
        error_field(reports[0], args.bandwidth, make_grid(domain, args.grid_resolution)).to_csv(args.out_error_field)
    m = reports[0].metrics
    logger.info("median error %s km, coverage %s", m.get("median_error_km"), m.get("coverage"))


def cmd_export_surface(args):
    model = load_model(args.model)
    qs = _load_queries(args.queries, model)
    idx = list(range(len(qs)))
    if args.id:
        pos = {sid: i for i, sid in enumerate(qs.ids)}
        missing = [sid for sid in args.id if sid not in pos]
        if missing:
            raise DeepSpaceError(f"query id {missing[0]!r} not found in {args.queries}")
        idx = [pos[sid] for sid in args.id]
    surf = model.density_grid(qs.X[idx])
    ids = [qs.ids[i] for i in idx]
    fmt = args.format or ("geojson" if str(args.out).endswith((".geojson", ".json")) else "csv")
    if fmt == "csv":
        write_surface_csv(args.out, model.grid_, surf, ids)
    else:
        with open(args.out, "w") as fh:
            json.dump(surface_geojson(model.grid_, surf, ids), fh)


def _read_sample_results(path):
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), start=2):
            try:
                out.append(SampleResult(
                    id=row["id"], fold=int(row["fold"]), true_lat=float(row["true_lat"]),
                    true_lon=float(row["true_lon"]), pred_lat=float(row["pred_lat"]),
                    pred_lon=float(row["pred_lon"]), error_km=float(row["error_km"]),
                ))
            except (KeyError, ValueError) as exc:
                raise DeepSpaceError(f"{path}: line {lineno}: bad result row ({exc})") from None
    return out


def cmd_export_error_field(args):
    results = _read_sample_results(args.samples)
    grid = make_grid(load_domain(args.domain), args.grid_resolution)
    error_field(results, args.bandwidth, grid).to_csv(args.out)


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "predict": cmd_predict,
    "cv": cmd_cv,
    "export-surface": cmd_export_surface,
    "export-error-field": cmd_export_error_field,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _resolve(args, parser)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (DeepSpaceError, ValueError, OSError, KeyError) as exc:
        print(f"deepspace {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
