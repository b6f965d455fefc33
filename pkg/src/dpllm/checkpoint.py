"""JSON checkpoints.

Layout (version 1)::

    {
      "format": "dpllm-checkpoint",
      "version": 1,
      "num_classes": K, "num_filters": M, "input_dim": D, "proj_dim": D',
      "beta": float, "projection_seed": int, "uses_projection": bool,
      "filters": {"shape": [K, M, D'], "data": [... row-major ...]},
      "biases":  {"shape": [K, M], "data": [...]},
      "metadata": {...}   # training config, report, ledger state
    }

Floats are written with ``repr`` precision, so reading back is bit-exact.
Projection matrices are never stored; they are regenerated from the seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import ModelParams

FORMAT = "dpllm-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _array(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def _unarray(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=np.float64).reshape(obj["shape"])


def to_dict(params: ModelParams, metadata: dict | None = None) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "num_classes": params.num_classes,
        "num_filters": params.num_filters,
        "input_dim": params.input_dim,
        "proj_dim": params.proj_dim,
        "beta": float(params.beta),
        "projection_seed": int(params.projection_seed),
        "uses_projection": bool(params.uses_projection),
        "filters": _array(params.filters),
        "biases": _array(params.biases),
        "metadata": metadata or {},
    }


def from_dict(doc: dict) -> tuple[ModelParams, dict]:
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')}")
    try:
        params = ModelParams(
            int(doc["num_classes"]), int(doc["num_filters"]), int(doc["input_dim"]), int(doc["proj_dim"]),
            float(doc["beta"]), _unarray(doc["filters"]), _unarray(doc["biases"]),
            int(doc["projection_seed"]), bool(doc["uses_projection"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"checkpoint missing field {exc}") from None
    return params, doc.get("metadata", {})


def save(path, params: ModelParams, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_dict(params, metadata), allow_nan=False))
    return path


def load(path) -> tuple[ModelParams, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(doc)
