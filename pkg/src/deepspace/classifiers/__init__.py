"""Tile classifiers and the presets used by the geolocation ensemble."""
from __future__ import annotations

from dataclasses import dataclass, field

from .forest import BinaryForestClassifier
from .knn import JaccardKNNClassifier, jaccard_distance, jaccard_distances
from .net import NetClassifier, NetParameters, gradient_check, net_forward

PRESETS = {
    "knn": (JaccardKNNClassifier, {"n_neighbors": 25}),
    "forest": (BinaryForestClassifier, {"n_estimators": 200}),
    "shallow": (NetClassifier, {"hidden": (2048,), "activation": "relu", "dropout": 0.0}),
    "deep": (NetClassifier, {"hidden": (2048, 1024, 1024), "activation": "relu", "dropout": 0.3}),
}

# Display names used as row labels in metric tables.
MODEL_NAMES = {"knn": "Spatial NN", "forest": "Spatial RF", "shallow": "Spatial Net", "deep": "DeepSpace"}

CLASSES = {cls.__name__: cls for cls in (JaccardKNNClassifier, BinaryForestClassifier, NetClassifier)}


@dataclass
class ClassifierSpec:
    """A preset name plus parameter overrides (e.g. epochs or hidden widths)."""

    kind: str = "deep"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PRESETS:
            raise ValueError(f"unknown classifier kind {self.kind!r}; choose from {sorted(PRESETS)}")
        if "hidden" in self.params:
            self.params["hidden"] = tuple(int(h) for h in self.params["hidden"])

    def build(self, **extra):
        cls, defaults = PRESETS[self.kind]
        return cls(**{**defaults, **self.params, **extra})

    @property
    def model_name(self) -> str:
        return MODEL_NAMES[self.kind]

    def to_dict(self) -> dict:
        params = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        return {"kind": self.kind, "params": params}

    @classmethod
    def from_dict(cls, d) -> "ClassifierSpec":
        return cls(d.get("kind", "deep"), dict(d.get("params", {})))


def make_classifier(kind="deep", **params):
    return ClassifierSpec(kind, params).build()


__all__ = [
    "BinaryForestClassifier",
    "ClassifierSpec",
    "JaccardKNNClassifier",
    "NetClassifier",
    "NetParameters",
    "gradient_check",
    "jaccard_distance",
    "jaccard_distances",
    "make_classifier",
    "net_forward",
]
