"""Ordered collection of named linear-layer weights, stored as a directory."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInput
from .io import read_json, read_tensor, write_json, write_tensor
from .linalg import as_matrix


@dataclass
class Layer:
    layer_id: str
    weight: np.ndarray
    active: bool = True


@dataclass
class ModelBundle:
    name: str
    layers: list[Layer]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [layer.layer_id for layer in self.layers]
        if len(set(ids)) != len(ids):
            raise InvalidInput(f"duplicate layer ids in {ids}")
        for layer in self.layers:
            layer.weight = as_matrix(layer.weight, layer.layer_id)

    def __getitem__(self, layer_id: str) -> Layer:
        for layer in self.layers:
            if layer.layer_id == layer_id:
                return layer
        raise KeyError(layer_id)

    @property
    def layer_ids(self) -> list[str]:
        return [layer.layer_id for layer in self.layers]

    def save(self, directory) -> None:
        d = Path(directory)
        (d / "weights").mkdir(parents=True, exist_ok=True)
        entries = []
        for layer in self.layers:
            rel = f"weights/{layer.layer_id}.qdt"
            write_tensor(layer.weight, d / rel, np.float32)
            entries.append({"id": layer.layer_id, "active": layer.active, "file": rel})
        write_json({"name": self.name, "metadata": self.metadata, "layers": entries}, d / "model.json")

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        d = Path(directory)
        manifest = read_json(d / "model.json")
        try:
            layers = [
                Layer(e["id"], read_tensor(d / e["file"]).astype(np.float64), bool(e["active"]))
                for e in manifest["layers"]
            ]
            return cls(manifest["name"], layers, manifest.get("metadata", {}))
        except KeyError as exc:
            raise FormatError(f"{d / 'model.json'}: missing field {exc}") from None
