"""Locally linear maps: M softmax-weighted linear score functions per class.

For class ``k`` and filter ``m``::

    g[k, m] = filters[k, m] . (R_m x) + biases[k, m]
    s[k, :] = softmax(beta * g[k, :])
    f[k]    = sum_m s[k, m] * g[k, m]
    y_hat   = softmax(f)
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .projection import ProjectionSet, generate, identity


class DimensionError(ValueError):
    """Input shape does not match the model."""

    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected {expected}, got {actual}")


@dataclass(frozen=True)
class ModelParams:
    num_classes: int
    num_filters: int
    input_dim: int
    proj_dim: int
    beta: float
    filters: np.ndarray  # (K, M, D')
    biases: np.ndarray  # (K, M)
    projection_seed: int = 0
    uses_projection: bool = True

    def __post_init__(self):
        K, M, P = self.num_classes, self.num_filters, self.proj_dim
        if min(K, M, self.input_dim, P) < 1:
            raise ValueError("num_classes, num_filters, input_dim and proj_dim must be positive")
        if P > self.input_dim:
            raise ValueError(f"proj_dim {P} exceeds input_dim {self.input_dim}")
        if not self.uses_projection and P != self.input_dim:
            raise ValueError("proj_dim must equal input_dim when projections are disabled")
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if self.filters.shape != (K, M, P):
            raise DimensionError("filters", (K, M, P), self.filters.shape)
        if self.biases.shape != (K, M):
            raise DimensionError("biases", (K, M), self.biases.shape)
        if not (np.all(np.isfinite(self.filters)) and np.all(np.isfinite(self.biases))):
            raise ValueError("parameters contain non-finite entries")

    @property
    def num_params(self) -> int:
        return self.num_classes * self.num_filters * (self.proj_dim + 1)

    def flat(self) -> np.ndarray:
        """Parameters as one vector, laid out (class, filter, [filter dims..., bias])."""
        return np.concatenate([self.filters, self.biases[..., None]], axis=2).reshape(-1)

    def with_flat(self, vec: np.ndarray) -> "ModelParams":
        blocks = np.asarray(vec, dtype=np.float64).reshape(
            self.num_classes, self.num_filters, self.proj_dim + 1
        )
        return replace(self, filters=blocks[..., :-1].copy(), biases=blocks[..., -1].copy())

    def projections(self) -> ProjectionSet:
        """Regenerate the projection set this model was built with."""
        if not self.uses_projection:
            return identity(self.num_filters, self.input_dim, self.projection_seed)
        return generate(self.projection_seed, self.num_filters, self.proj_dim, self.input_dim)


@dataclass(frozen=True)
class ForwardTrace:
    pre_activations: np.ndarray  # g, (K, M)
    weights: np.ndarray  # softmax weighting over filters, (K, M)
    scores: np.ndarray  # f, (K,)
    probs: np.ndarray  # y_hat, (K,)


def init_params(
    num_classes: int,
    num_filters: int,
    input_dim: int,
    proj_dim: int | None = None,
    beta: float = 1.0,
    seed: int = 0,
    projection_seed: int | None = None,
    init_scale: float = 0.01,
) -> ModelParams:
    """Gaussian init with std ``init_scale``; ``proj_dim=None`` disables projections."""
    uses_projection = proj_dim is not None
    P = proj_dim if uses_projection else input_dim
    rng = np.random.default_rng(seed)
    filters = rng.normal(0.0, init_scale, size=(num_classes, num_filters, P))
    biases = rng.normal(0.0, init_scale, size=(num_classes, num_filters))
    if projection_seed is None:
        projection_seed = int(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0] >> np.uint64(1))
    return ModelParams(
        num_classes, num_filters, input_dim, P, float(beta), filters, biases,
        int(projection_seed), uses_projection,
    )


def softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = a - np.max(a, axis=axis, keepdims=True)
    e = np.exp(a)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = a - np.max(a, axis=axis, keepdims=True)
    return a - np.log(np.sum(np.exp(a), axis=axis, keepdims=True))


def _check_projections(params: ModelParams, projections: ProjectionSet) -> None:
    expected = (params.num_filters, params.proj_dim, params.input_dim)
    actual = (projections.num_filters, projections.proj_dim, projections.input_dim)
    if expected != actual:
        raise DimensionError("projection set (M, D', D)", expected, actual)


def scores_from_projected(params: ModelParams, Z: np.ndarray):
    """Batched forward pass from projected inputs ``Z`` of shape (N, M, D').

    Returns ``(g, s, f, y_hat)`` with shapes (N, K, M), (N, K, M), (N, K), (N, K).
    """
    g = np.einsum("kmp,nmp->nkm", params.filters, Z) + params.biases
    s = softmax(params.beta * g, axis=2)
    f = np.sum(s * g, axis=2)
    return g, s, f, softmax(f, axis=1)


def _as_batch(params: ModelParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise DimensionError("input batch shape", ("N", params.input_dim), X.shape)
    if X.shape[0] < 1:
        raise DimensionError("batch size", ">= 1", 0)
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains non-finite values")
    return X


def forward(params: ModelParams, projections: ProjectionSet, x) -> ForwardTrace:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise DimensionError("input length", params.input_dim, x.shape[0] if x.ndim == 1 else x.shape)
    return forward_batch(params, projections, x[None, :])[0]


def forward_batch(params: ModelParams, projections: ProjectionSet, X) -> list[ForwardTrace]:
    _check_projections(params, projections)
    X = _as_batch(params, X)
    g, s, f, p = scores_from_projected(params, projections.project_batch(X))
    return [ForwardTrace(g[i], s[i], f[i], p[i]) for i in range(X.shape[0])]


def predict_proba(params: ModelParams, projections: ProjectionSet, X, chunk: int = 1000) -> np.ndarray:
    """Class probabilities for a batch, evaluated in chunks to bound memory."""
    _check_projections(params, projections)
    X = _as_batch(params, X)
    out = np.empty((X.shape[0], params.num_classes))
    for lo in range(0, X.shape[0], chunk):
        out[lo:lo + chunk] = scores_from_projected(params, projections.project_batch(X[lo:lo + chunk]))[3]
    return out


def predict(params: ModelParams, projections: ProjectionSet, x) -> int:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return int(np.argmax(forward(params, projections, x).probs))


def predict_batch(params: ModelParams, projections: ProjectionSet, X, chunk: int = 1000) -> np.ndarray:
    return np.argmax(predict_proba(params, projections, X, chunk), axis=1)
