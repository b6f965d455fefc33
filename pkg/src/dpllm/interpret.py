"""Global filter banks, per-input filter rankings, and filter rendering."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelParams, forward
from .projection import ProjectionSet

IMAGE_FORMATS = {"pgm": b"P5", "pgm-ascii": b"P2", "ppm": b"P6", "ppm-ascii": b"P3"}


def global_filters(params: ModelParams, projections: ProjectionSet) -> np.ndarray:
    """Input-space filter bank ``w[k, m] = filters[k, m] R_m``, shape (K, M, D)."""
    return projections.reconstruct_all(params.filters)


@dataclass(frozen=True)
class ExplanationReport:
    input_id: int
    predicted_class: int
    rankings: list  # per class: [(filter index, weight), ...] by descending weight
    top_indices: list  # filter indices shown for the predicted class
    top_filters: np.ndarray  # (top_k, D)
    weighted_filter: np.ndarray  # sum_m s[k, m] w[k, m] for the predicted class
    weighted_bias: float
    scores: np.ndarray

    def top_weight(self) -> float:
        return self.rankings[self.predicted_class][0][1]

    def to_dict(self) -> dict:
        return {
            "input_id": self.input_id,
            "predicted_class": self.predicted_class,
            "scores": self.scores.tolist(),
            "rankings": [[[m, w] for m, w in r] for r in self.rankings],
            "top_indices": list(self.top_indices),
            "weighted_bias": self.weighted_bias,
        }


def local_explanation(
    params: ModelParams, projections: ProjectionSet, x, top_k: int = 3, input_id: int = 0
) -> ExplanationReport:
    if not 1 <= top_k <= params.num_filters:
        raise ValueError(f"top_k must lie in [1, {params.num_filters}], got {top_k}")
    trace = forward(params, projections, x)
    k = int(np.argmax(trace.probs))
    rankings = []
    for weights in trace.weights:
        order = sorted(range(params.num_filters), key=lambda m: (-weights[m], m))
        rankings.append([(int(m), float(weights[m])) for m in order])
    top = [m for m, _ in rankings[k][:top_k]]
    bank = np.stack([projections.reconstruct_filter(m, params.filters[k, m]) for m in range(params.num_filters)])
    s = trace.weights[k]
    return ExplanationReport(
        input_id, k, rankings, top, bank[top], s @ bank, float(s @ params.biases[k]), trace.scores,
    )


def dominance_fraction(params: ModelParams, projections: ProjectionSet, X, threshold: float = 0.9) -> float:
    """Share of inputs whose predicted class puts more than ``threshold`` weight on one filter."""
    hits = 0
    for x in X:
        trace = forward(params, projections, x)
        hits += trace.weights[int(np.argmax(trace.probs))].max() > threshold
    return hits / len(X)


def normalize_symmetric(values) -> tuple[np.ndarray, float]:
    """Divide by the max absolute value; returns ``(normalized, scale)``."""
    values = np.asarray(values, dtype=np.float64)
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    if scale == 0.0:
        return np.zeros_like(values), 0.0
    return values / scale, scale


def _gray_bytes(v: np.ndarray) -> np.ndarray:
    return np.floor((v + 1.0) / 2.0 * 255.0 + 0.5).astype(np.uint8)


def _diverging_rgb(v: np.ndarray) -> np.ndarray:
    # blue at -1, white at 0, red at +1
    rgb = np.empty(v.shape + (3,))
    neg = np.clip(-v, 0, 1)
    pos = np.clip(v, 0, 1)
    rgb[..., 0] = 1.0 - neg
    rgb[..., 1] = 1.0 - neg - pos
    rgb[..., 2] = 1.0 - pos
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


def render_filter(filt, rows: int | None, cols: int | None, out_path, fmt: str = "pgm") -> Path:
    """Write a filter as a PGM/PPM image or a (feature index, value) CSV.

    Values are divided by their max absolute value; that scale goes into the
    ``<out_path>.json`` sidecar so the original values can be recovered.
    """
    filt = np.asarray(filt, dtype=np.float64).reshape(-1)
    out_path = Path(out_path)
    norm, scale = normalize_symmetric(filt)
    if fmt == "csv":
        lines = ["feature,value"] + [f"{i},{v!r}" for i, v in enumerate(norm.tolist())]
        out_path.write_text("\n".join(lines) + "\n")
    elif fmt in IMAGE_FORMATS:
        if rows is None or cols is None or rows * cols != filt.size:
            raise ValueError(f"image of {rows}x{cols} cannot hold a filter of length {filt.size}")
        img = norm.reshape(rows, cols)
        magic = IMAGE_FORMATS[fmt]
        if fmt.startswith("pgm"):
            pixels = _gray_bytes(img)
        else:
            pixels = _diverging_rgb(img)
        header = magic + f"\n{cols} {rows}\n255\n".encode()
        if fmt.endswith("ascii"):
            body = "\n".join(" ".join(str(int(p)) for p in row.reshape(-1)) for row in pixels) + "\n"
            out_path.write_bytes(header + body.encode())
        else:
            out_path.write_bytes(header + pixels.tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}; expected csv or one of {sorted(IMAGE_FORMATS)}")
    sidecar = {"scale": scale, "format": fmt, "rows": rows, "cols": cols, "length": int(filt.size)}
    Path(str(out_path) + ".json").write_text(json.dumps(sidecar, indent=1))
    return out_path


def read_pgm(path) -> np.ndarray:
    """Read a binary or ASCII PGM back into a uint8 array (rows, cols)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    magic, cols, rows, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("only 8-bit graymaps are supported")
    if magic == b"P5":
        return np.frombuffer(data, np.uint8, rows * cols, pos + 1).reshape(rows, cols)
    if magic == b"P2":
        return np.array(data[pos:].split(), dtype=np.uint8).reshape(rows, cols)
    raise ValueError(f"not a PGM file (magic {magic!r})")


def heatmap_rows(vectors) -> np.ndarray:
    """Normalize each row to [-1, 1] independently (tabular explanation heatmaps)."""
    return np.stack([normalize_symmetric(v)[0] for v in np.atleast_2d(vectors)])


def write_heatmap_csv(path, vectors, row_labels, feature_names=None) -> Path:
    rows = heatmap_rows(vectors)
    feature_names = feature_names or [str(i) for i in range(rows.shape[1])]
    lines = ["label," + ",".join(feature_names)]
    for label, row in zip(row_labels, rows):
        lines.append(f"{label}," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def image_shape_for(dim: int) -> tuple[int, int] | None:
    side = int(math.isqrt(dim))
    return (side, side) if side * side == dim else None
