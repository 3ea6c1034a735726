"""Model container: a zip of a JSON manifest plus .npy arrays, written deterministically."""
from __future__ import annotations

import csv
import io
import json
import zipfile

import numpy as np

from .classifiers import CLASSES, ClassifierSpec
from .ensemble import DeepSpace, EnsembleMember, PartitionScheme
from .exceptions import ModelFormatError
from .geometry import Domain, VoronoiPartition, make_grid

FORMAT = "deepspace-model"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _jsonable(v):
    if isinstance(v, ClassifierSpec):
        return {"spec": v.to_dict()}
    if isinstance(v, PartitionScheme):
        return {"name": v.name, "fractions": list(v.fractions), "n_seeds": v.n_seeds}
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def _classifier_param(clf):
    if isinstance(clf, str):
        return {"spec": ClassifierSpec(clf).to_dict()}
    if isinstance(clf, ClassifierSpec):
        return {"spec": clf.to_dict()}
    return {"class": type(clf).__name__, "params": {k: _jsonable(v) for k, v in clf.get_params().items()}}


def _restore_classifier_param(d):
    if "spec" in d:
        return ClassifierSpec.from_dict(d["spec"])
    cls = CLASSES.get(d.get("class"))
    if cls is None:
        raise ModelFormatError(f"unknown classifier class {d.get('class')!r}")
    params = {k: tuple(v) if isinstance(v, list) else v for k, v in d["params"].items()}
    return cls(**params)


def _npy_bytes(arr) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _write(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_model(model: DeepSpace, path):
    """Write a fitted model. Identical models give byte-identical files."""
    if not hasattr(model, "members_"):
        raise ModelFormatError("model is not fitted")
    scheme = PartitionScheme.from_name(model.scheme)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "params": {
            "classifier": _classifier_param(model.classifier),
            "scheme": _jsonable(scheme),
            "n_partitions": int(model.n_partitions),
            "mc_points": int(model.mc_points),
            "metric": model.metric,
            "grid_resolution": float(model.grid_resolution),
            "normalize": bool(model.normalize),
            "max_redraws": int(model.max_redraws),
            "random_state": model.random_state if model.random_state is None else int(model.random_state),
        },
        "seed": model.seed_,
        "n_features": int(model.n_features_in_),
        "domain": model.domain.to_geojson(),
        "domain_name": model.domain.name,
        "members": [],
    }
    arrays = {}
    for j, mem in enumerate(model.members_):
        meta, arrs = mem.classifier._get_state()
        manifest["members"].append({
            "classifier": type(mem.classifier).__name__,
            "meta": meta,
            "arrays": sorted(arrs),
            "n_tiles": int(mem.partition.n_tiles),
        })
        prefix = f"members/{j:04d}/"
        arrays[prefix + "seeds.npy"] = mem.partition.seeds
        arrays[prefix + "areas.npy"] = mem.partition.areas
        arrays[prefix + "cell_tile.npy"] = mem.cell_tile
        for name, arr in arrs.items():
            arrays[prefix + f"clf_{name}.npy"] = arr
    with open(path, "wb") as fh, zipfile.ZipFile(fh, "w") as zf:
        _write(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
        for name in sorted(arrays):
            _write(zf, name, _npy_bytes(arrays[name]))


def load_model(path) -> DeepSpace:
    try:
        zf = zipfile.ZipFile(path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise ModelFormatError(f"{path}: not a model file ({exc})") from exc
    with zf:
        try:
            manifest = json.loads(zf.read("manifest.json"))
        except KeyError:
            raise ModelFormatError(f"{path}: missing manifest.json") from None
        if manifest.get("format") != FORMAT:
            raise ModelFormatError(f"{path}: unexpected format {manifest.get('format')!r}")
        if manifest.get("version") != VERSION:
            raise ModelFormatError(f"{path}: unsupported version {manifest.get('version')!r}")

        def arr(name):
            try:
                with zf.open(name) as fh:
                    return np.load(io.BytesIO(fh.read()), allow_pickle=False)
            except KeyError:
                raise ModelFormatError(f"{path}: missing array {name}") from None

        p = manifest["params"]
        sch = p["scheme"]
        scheme = PartitionScheme(sch["name"], tuple(sch["fractions"]), sch["n_seeds"])
        domain = Domain.from_geojson(manifest["domain"])
        domain.name = manifest.get("domain_name", domain.name)
        model = DeepSpace(domain=domain, classifier=_restore_classifier_param(p["classifier"]), scheme=scheme,
                          n_partitions=p["n_partitions"], mc_points=p["mc_points"], metric=p["metric"],
                          grid_resolution=p["grid_resolution"], normalize=p["normalize"],
                          max_redraws=p["max_redraws"], random_state=p["random_state"])
        model.seed_ = manifest["seed"]
        model.n_features_in_ = manifest["n_features"]
        model.grid_ = make_grid(domain, model.grid_resolution)
        members = []
        for j, m in enumerate(manifest["members"]):
            prefix = f"members/{j:04d}/"
            cls = CLASSES.get(m["classifier"])
            if cls is None:
                raise ModelFormatError(f"{path}: member {j} has unknown classifier {m['classifier']!r}")
            clf = cls._from_state(m["meta"], {name: arr(prefix + f"clf_{name}.npy") for name in m["arrays"]})
            part = VoronoiPartition(arr(prefix + "seeds.npy"), arr(prefix + "areas.npy"), p["mc_points"], p["metric"])
            cell_tile = arr(prefix + "cell_tile.npy")
            if len(cell_tile) != len(model.grid_):
                raise ModelFormatError(f"{path}: member {j} grid size mismatch")
            members.append(EnsembleMember(part, clf, cell_tile))
        model.members_ = members
    return model


def write_surface_csv(path, grid, surfaces, ids=None):
    """Long-format CSV of grid densities: (id,) lat, lon, density."""
    surfaces = np.atleast_2d(surfaces)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["id"] if ids is not None else []) + ["lat", "lon", "density"])
        for q, row in enumerate(surfaces):
            prefix = [ids[q]] if ids is not None else []
            for (lat, lon), v in zip(grid.centers, row):
                w.writerow(prefix + [repr(float(lat)), repr(float(lon)), repr(float(v))])


def surface_geojson(grid, surfaces, ids=None) -> dict:
    """FeatureCollection of grid-center points carrying a ``density`` property."""
    surfaces = np.atleast_2d(surfaces)
    feats = []
    for q, row in enumerate(surfaces):
        for (lat, lon), v in zip(grid.centers, row):
            props = {"density": float(v)}
            if ids is not None:
                props["id"] = ids[q]
            feats.append({"type": "Feature", "properties": props,
                          "geometry": {"type": "Point", "coordinates": [float(lon), float(lat)]}})
    return {"type": "FeatureCollection", "features": feats}
