"""Geolocation of samples from binary features via random Voronoi partition ensembles."""
from .classifiers import (
    BinaryForestClassifier,
    ClassifierSpec,
    JaccardKNNClassifier,
    NetClassifier,
    make_classifier,
)
from .data import AreaTable, Dataset, Sample, compute_weights, load_samples, save_samples
from .domains import conus, load_domain
from .ensemble import (
    DeepSpace,
    PartitionScheme,
    PredictionRegion,
    density,
    geolocate,
    prediction_region,
    train_ensemble,
)
from .evaluation import CvConfig, area_dnn_baseline, area_match, confusion_matrix, error_field, kfold_split, run_cv
from .exceptions import DataFormatError, DeepSpaceError, DegenerateDomainError, DivergenceError, PartitionError
from .geometry import Domain, GeoPoint, Grid, VoronoiPartition, haversine, make_grid, make_partition
from .io import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "AreaTable",
    "BinaryForestClassifier",
    "ClassifierSpec",
    "CvConfig",
    "DataFormatError",
    "Dataset",
    "DeepSpace",
    "DeepSpaceError",
    "DegenerateDomainError",
    "DivergenceError",
    "Domain",
    "GeoPoint",
    "Grid",
    "JaccardKNNClassifier",
    "NetClassifier",
    "PartitionError",
    "PartitionScheme",
    "PredictionRegion",
    "Sample",
    "VoronoiPartition",
    "area_dnn_baseline",
    "area_match",
    "compute_weights",
    "confusion_matrix",
    "conus",
    "density",
    "error_field",
    "geolocate",
    "haversine",
    "kfold_split",
    "load_domain",
    "load_model",
    "load_samples",
    "make_classifier",
    "make_grid",
    "make_partition",
    "prediction_region",
    "run_cv",
    "save_model",
    "save_samples",
    "train_ensemble",
]
