import json
import zipfile

import numpy as np
import pytest

from deepspace.classifiers import ClassifierSpec, JaccardKNNClassifier
from deepspace.ensemble import DeepSpace
from deepspace.exceptions import ModelFormatError
from deepspace.geometry import make_grid
from deepspace.io import load_model, save_model, surface_geojson, write_surface_csv
from deepspace.synth import SyntheticConfig, generate


@pytest.fixture(scope="module")
def data():
    config = SyntheticConfig(p=30, n=80, n_informative=8, seed=1)
    return generate(config), config.resolve_domain()


@pytest.mark.parametrize("classifier", [
    ClassifierSpec("knn"),
    ClassifierSpec("forest", {"n_estimators": 5}),
    ClassifierSpec("deep", {"hidden": [8, 4, 4], "epochs": 1}),
    JaccardKNNClassifier(3),
])
def test_round_trip_byte_identical(tmp_path, data, classifier):
    ds, domain = data
    kw = dict(domain=domain, classifier=classifier, n_partitions=2, mc_points=3000, grid_resolution=1.0,
              random_state=4)
    model = DeepSpace(**kw).fit(ds.X, ds.coords)
    save_model(model, tmp_path / "a.zip")
    save_model(DeepSpace(**kw).fit(ds.X, ds.coords), tmp_path / "b.zip")
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()
    back = load_model(tmp_path / "a.zip")
    assert back.density_grid(ds.X[:5]).tobytes() == model.density_grid(ds.X[:5]).tobytes()
    assert back.domain == domain and back.n_features_in_ == ds.p


def test_manifest_has_no_pickles(tmp_path, data):
    ds, domain = data
    model = DeepSpace(domain, "knn", n_partitions=1, mc_points=2000, grid_resolution=1.0, random_state=0)
    save_model(model.fit(ds.X, ds.coords), tmp_path / "m.zip")
    with zipfile.ZipFile(tmp_path / "m.zip") as zf:
        manifest = json.loads(zf.read("manifest.json"))
        assert all(n == "manifest.json" or n.endswith(".npy") for n in zf.namelist())
    assert manifest["format"] == "deepspace-model" and manifest["version"] == 1


def test_bad_files(tmp_path):
    (tmp_path / "junk.zip").write_bytes(b"not a zip")
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "junk.zip")
    with zipfile.ZipFile(tmp_path / "v9.zip", "w") as zf:
        zf.writestr("manifest.json", json.dumps({"format": "deepspace-model", "version": 9}))
    with pytest.raises(ModelFormatError):
        load_model(tmp_path / "v9.zip")


def test_surface_exports(tmp_path, data):
    _, domain = data
    grid = make_grid(domain, 2.0)
    surf = np.arange(2 * len(grid), dtype=float).reshape(2, -1)
    write_surface_csv(tmp_path / "s.csv", grid, surf, ["a", "b"])
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "id,lat,lon,density" and len(lines) == 1 + 2 * len(grid)
    gj = surface_geojson(grid, surf[:1])
    assert len(gj["features"]) == len(grid)
    lon, lat = gj["features"][0]["geometry"]["coordinates"]
    assert [lat, lon] == grid.centers[0].tolist()
