"""Dataset loading: IDX image files, tabular CSV, powerset labels, subsampling.

Medical label bits: hypertension is bit 0, diabetes bit 1, fatty liver bit 2,
so the powerset class id is ``b0 + 2*b1 + 4*b2``.
"""

from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MEDICAL_LABELS = ("hypertension", "diabetes", "fatty_liver")


class DataError(ValueError):
    pass


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, column: str, value: str):
        self.row, self.column, self.value = row, column, value
        super().__init__(f"cannot parse value {value!r} at row {row}, column {column!r}")


class MissingColumnError(DataError):
    def __init__(self, column: str):
        self.column = column
        super().__init__(f"missing column {column!r} in header")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (N, D)
    labels: np.ndarray  # (N,) ints in [0, K)
    num_classes: int
    class_names: tuple[str, ...] | None = None
    provenance: str = ""
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DataError(f"features must be a nonempty 2-D array, got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise DataError("labels and features disagree on the number of rows")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels out of range [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.features[idx], self.labels[idx], self.num_classes,
            self.class_names, self.provenance, self.image_shape,
        )


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file shorter than the 4-byte magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise BadMagicError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n_bytes = int(np.prod(dims))
    if len(raw) - header < n_bytes:
        raise TruncatedFileError(f"{path}: expected {n_bytes} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=n_bytes, offset=header).reshape(dims)


def read_idx_images(path) -> np.ndarray:
    return _read_idx(path, IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABELS_MAGIC, 1)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape))
        fh.write(images.tobytes(order="C"))


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Images scaled to [0, 1] and flattened row-major."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DimensionMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n, rows, cols = images.shape
    features = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    K = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(features, labels, K, provenance=f"idx:{images_path}", image_shape=(rows, cols))


IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(directory, split: str) -> tuple[Path, Path] | None:
    """Locate the standard MNIST-style file pair (optionally gzipped) in ``directory``."""
    directory = Path(directory)
    found = []
    for name in IDX_NAMES[split]:
        for candidate in (directory / name, directory / (name + ".gz")):
            if candidate.exists():
                found.append(candidate)
                break
        else:
            return None
    return found[0], found[1]


# --- tabular data -----------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        return cls(X.mean(axis=0), X.std(axis=0))

    def transform(self, X: np.ndarray) -> np.ndarray:
        # constant columns map to zero
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (X - self.mean) / safe, 0.0)


@dataclass(frozen=True)
class PowersetReport:
    dense_to_original: tuple[int, ...]
    counts: dict = field(default_factory=dict)  # original id -> count before filtering
    kept_rows: int = 0
    total_rows: int = 0

    @property
    def original_to_dense(self) -> dict:
        return {orig: i for i, orig in enumerate(self.dense_to_original)}


def powerset_ids(binary_labels: np.ndarray) -> np.ndarray:
    B = np.asarray(binary_labels)
    if B.ndim != 2:
        raise DataError("binary labels must be a 2-D array")
    if not np.all((B == 0) | (B == 1)):
        raise DataError("binary labels must be 0 or 1")
    return (B.astype(np.int64) << np.arange(B.shape[1])).sum(axis=1)


def powerset_transform(binary_labels: np.ndarray, keep_top: int) -> tuple[np.ndarray, np.ndarray, PowersetReport]:
    """Map multi-binary labels to powerset classes and keep the ``keep_top`` most frequent.

    Returns ``(dense_labels, keep_mask, report)``.  Dense ids are assigned by
    descending frequency, ties broken by the smaller original id.
    """
    ids = powerset_ids(binary_labels)
    n_classes = 2 ** np.asarray(binary_labels).shape[1]
    counts = np.bincount(ids, minlength=n_classes)
    order = sorted(range(n_classes), key=lambda c: (-counts[c], c))
    kept = [c for c in order[:keep_top] if counts[c] > 0]
    lookup = np.full(n_classes, -1)
    lookup[kept] = np.arange(len(kept))
    dense = lookup[ids]
    mask = dense >= 0
    report = PowersetReport(
        tuple(int(c) for c in kept),
        {int(c): int(counts[c]) for c in range(n_classes)},
        int(mask.sum()),
        int(len(ids)),
    )
    return dense[mask], mask, report


def read_csv_columns(path, columns: list[str]) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        index = {}
        for col in columns:
            if col not in header:
                raise MissingColumnError(col)
            index[col] = header.index(col)
        rows = []
        for r, row in enumerate(reader, start=1):
            if not row:
                continue
            vals = []
            for col in columns:
                cell = row[index[col]] if index[col] < len(row) else ""
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ParseError(r, col, cell) from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def csv_header(path) -> list[str]:
    with open(path, newline="") as fh:
        return [h.strip() for h in next(csv.reader(fh))]


def load_csv(
    path,
    feature_cols: list[str] | None,
    label_cols: list[str],
    keep_top: int | None = None,
    standardizer: Standardizer | None = None,
    powerset: PowersetReport | None = None,
    standardize: bool = True,
) -> tuple[Dataset, Standardizer | None, PowersetReport | None]:
    """Load a tabular dataset.

    ``feature_cols=None`` takes every column not listed in ``label_cols``.  With
    more than one label column, labels go through ``powerset_transform``; pass the
    training set's ``standardizer`` and ``powerset`` report when loading a test
    file so both splits share statistics and class ids.  ``standardize=False``
    returns raw features (and no standardizer) for callers that split first.
    """
    if feature_cols is None:
        feature_cols = [c for c in csv_header(path) if c not in label_cols]
    table = read_csv_columns(path, list(feature_cols) + list(label_cols))
    X = table[:, : len(feature_cols)]
    Y = table[:, len(feature_cols):]
    report = None
    if len(label_cols) > 1:
        if powerset is None:
            labels, mask, report = powerset_transform(Y, keep_top or 2 ** len(label_cols))
        else:
            report = powerset
            ids = powerset_ids(Y)
            lookup = report.original_to_dense
            dense = np.array([lookup.get(int(i), -1) for i in ids])
            mask = dense >= 0
            labels = dense[mask]
        X = X[mask]
        num_classes = len(report.dense_to_original)
        names = tuple(_powerset_name(c, label_cols) for c in report.dense_to_original)
    else:
        if not np.all(Y[:, 0] == np.round(Y[:, 0])) or Y.min() < 0:
            raise DataError("single label column must hold nonnegative integers")
        labels = Y[:, 0].astype(np.int64)
        num_classes = int(labels.max()) + 1
        names = None
    if standardize:
        if standardizer is None:
            standardizer = Standardizer.fit(X)
        X = standardizer.transform(X)
    else:
        standardizer = None
    ds = Dataset(X, labels, num_classes, names, provenance=f"csv:{path}")
    return ds, standardizer, report


def _powerset_name(class_id: int, label_cols) -> str:
    on = [label_cols[b] for b in range(len(label_cols)) if class_id >> b & 1]
    return "+".join(on) if on else "none"


def split(dataset: Dataset, test_fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Deterministic seeded train/test split."""
    n = len(dataset)
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def poisson_subsample(n: int, q: float, rng: np.random.Generator) -> np.ndarray:
    """Indices of rows included independently with probability ``q``."""
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {q}")
    if q == 1:
        return np.arange(n)
    return np.flatnonzero(rng.random(n) < q)


# --- synthetic medical-like data --------------------------------------------

# Target shares of the eight label combinations (by powerset id).  The four
# largest sum to 0.908, close to the 100,140 of 110,300 records kept in the
# original data.
SYNTHETIC_CLASS_SHARES = np.array([0.38, 0.22, 0.05, 0.03, 0.18, 0.128, 0.007, 0.005])


def synthetic_medical(
    n: int = 110_300,
    num_features: int = 62,
    seed: int = 0,
    signal: float = 2.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Features (n, 62) and binary labels (n, 3) from a ground-truth multinomial logit.

    Each of the eight powerset classes has a random weight vector; the intercepts
    are tuned so the expected class shares match ``SYNTHETIC_CLASS_SHARES``.  Features share a low-rank
    correlation structure.
    """
    rng = np.random.default_rng(seed)
    mixing = rng.normal(size=(8, num_features)) * 0.3
    X = rng.normal(size=(n, num_features)) + rng.normal(size=(n, 8)) @ mixing
    W = rng.normal(size=(num_features, 8)) * signal / np.sqrt(num_features)
    scores = X @ W
    intercept = np.log(SYNTHETIC_CLASS_SHARES)
    for _ in range(50):
        p = _softmax_rows(scores + intercept)
        intercept += np.log(SYNTHETIC_CLASS_SHARES) - np.log(p.mean(axis=0))
    p = _softmax_rows(scores + intercept)
    u = rng.random(n)
    cls = np.minimum((p.cumsum(axis=1) < u[:, None]).sum(axis=1), 7)
    bits = (cls[:, None] >> np.arange(3)) & 1
    return X, bits


def _softmax_rows(a: np.ndarray) -> np.ndarray:
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def write_medical_csv(path, X: np.ndarray, bits: np.ndarray) -> None:
    feature_names = [f"f{i:02d}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(feature_names + list(MEDICAL_LABELS))
        for x, b in zip(X, bits):
            w.writerow([repr(float(v)) for v in x] + [int(v) for v in b])
