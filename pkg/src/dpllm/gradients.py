"""Exact per-example gradients of the cross-entropy loss, and clipping.

With ``z_m = R_m x`` and loss ``-log y_hat[y]`` the chain rule gives::

    dL/df[k]        = y_hat[k] - y[k]
    df[k]/dg[k, m]  = s[k, m] * (1 + beta * (g[k, m] - f[k]))
    dL/dfilters[k, m] = coef[k, m] * z_m
    dL/dbiases[k, m]  = coef[k, m]

where ``coef[k, m] = dL/df[k] * df[k]/dg[k, m]``.  The second factor carries the
dependence of the softmax weighting on ``g``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DimensionError, ModelParams, _check_projections, log_softmax, scores_from_projected
from .projection import ProjectionSet


@dataclass(frozen=True)
class PerExampleGrad:
    d_filters: np.ndarray  # (K, M, D')
    d_biases: np.ndarray  # (K, M)

    def flat(self) -> np.ndarray:
        """Same layout as ``ModelParams.flat``: (class, filter, [dims..., bias])."""
        return np.concatenate([self.d_filters, self.d_biases[..., None]], axis=2).reshape(-1)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.d_filters**2) + np.sum(self.d_biases**2)))

    @classmethod
    def from_flat(cls, vec: np.ndarray, num_classes: int, num_filters: int, proj_dim: int) -> "PerExampleGrad":
        blocks = np.asarray(vec, dtype=np.float64).reshape(num_classes, num_filters, proj_dim + 1)
        return cls(blocks[..., :-1].copy(), blocks[..., -1].copy())


def _check_onehot(y, num_classes: int) -> int:
    y = np.asarray(y)
    if y.shape != (num_classes,):
        raise DimensionError("label length", num_classes, y.shape)
    if not (np.all((y == 0) | (y == 1)) and np.sum(y) == 1):
        raise ValueError(f"label must be one-hot, got {y.tolist()}")
    return int(np.argmax(y))


def loss(params: ModelParams, projections: ProjectionSet, x, y) -> float:
    """Cross-entropy of a single example against one-hot label ``y``."""
    label = _check_onehot(y, params.num_classes)
    _check_projections(params, projections)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise DimensionError("input length", params.input_dim, x.shape)
    _, _, f, _ = scores_from_projected(params, projections.project_batch(x[None, :]))
    return float(-log_softmax(f, axis=1)[0, label])


def batch_losses(params: ModelParams, Z: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example losses from projected inputs ``Z`` (N, M, D')."""
    _, _, f, _ = scores_from_projected(params, Z)
    return -log_softmax(f, axis=1)[np.arange(len(labels)), labels]


def batch_coefficients(params: ModelParams, Z: np.ndarray, labels: np.ndarray):
    """Return ``(coef, losses)``; ``coef`` has shape (N, K, M).

    The full per-example gradient of example ``n`` is ``coef[n, k, m] * Z[n, m]``
    for the filters and ``coef[n, k, m]`` for the biases.
    """
    g, s, f, p = scores_from_projected(params, Z)
    n = np.arange(len(labels))
    dL_df = p.copy()
    dL_df[n, labels] -= 1.0
    coef = dL_df[:, :, None] * s * (1.0 + params.beta * (g - f[:, :, None]))
    losses = -log_softmax(f, axis=1)[n, labels]
    return coef, losses


def batch_grad_norms(coef: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """L2 norm of each example's joint (filters + biases) gradient, without materializing it."""
    zsq = np.einsum("nmp,nmp->nm", Z, Z)
    return np.sqrt(np.einsum("nkm,nm->n", coef**2, zsq + 1.0))


def weighted_grad_sum(coef: np.ndarray, Z: np.ndarray, weights: np.ndarray):
    """``sum_n weights[n] * grad_n`` as (d_filters, d_biases)."""
    wc = coef * weights[:, None, None]
    return np.einsum("nkm,nmp->kmp", wc, Z), wc.sum(axis=0)


def per_example_grad(params: ModelParams, projections: ProjectionSet, x, y) -> PerExampleGrad:
    label = _check_onehot(y, params.num_classes)
    _check_projections(params, projections)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise DimensionError("input length", params.input_dim, x.shape)
    Z = np.asarray(projections.project_batch(x[None, :]))
    coef, _ = batch_coefficients(params, Z, np.array([label]))
    return PerExampleGrad(coef[0][:, :, None] * Z[0][None, :, :], coef[0].copy())


def clip_factor(norms: np.ndarray, C: float) -> np.ndarray:
    """Per-example scale ``1 / max(1, norm / C)``."""
    return 1.0 / np.maximum(1.0, np.asarray(norms) / C)


def clip(grad: PerExampleGrad, C: float) -> PerExampleGrad:
    """Rescale so the joint L2 norm is at most ``C``; direction is kept."""
    if not C > 0:
        raise ValueError(f"clipping threshold must be positive, got {C}")
    scale = float(clip_factor(grad.norm(), C))
    if scale == 1.0:
        return grad
    return PerExampleGrad(grad.d_filters * scale, grad.d_biases * scale)


def finite_difference_grad(params: ModelParams, projections: ProjectionSet, x, y, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss`` in the flat parameter layout."""
    theta = params.flat()
    out = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += step
        down = theta.copy()
        down[i] -= step
        out[i] = (loss(params.with_flat(up), projections, x, y) - loss(params.with_flat(down), projections, x, y)) / (2 * step)
    return out
