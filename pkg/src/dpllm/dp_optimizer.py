"""Differentially private training of locally linear maps.

Each DP step:
  1. draw a Poisson subsample with inclusion probability q = L / N,
  2. clip every example's joint gradient to norm C,
  3. add N(0, sigma^2 C^2 I) once to the sum and divide by L,
  4. hand the noisy gradient to SGD or Adam,
  5. charge the privacy ledger once.

The update rule only sees the already privatized gradient, so the choice of
optimizer does not affect the guarantee.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gradients as G
from .accountant import AccountantError, PrivacyLedger
from .data import Dataset, poisson_subsample
from .model import ModelParams, predict_batch
from .projection import ProjectionSet

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 500
    epochs: int = 20
    learning_rate: float = 0.001
    lr_decay: float = 0.8
    lr_decay_period: int = 5
    optimizer: str = "adam"  # "adam" or "sgd"
    dp_enabled: bool = True
    clip: float = 0.001
    noise_multiplier: float = 1.3
    delta: float = 1e-5
    seed: int = 0
    debug_checks: bool = False

    def validate(self, n: int | None = None) -> None:
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1 or self.lr_decay_period < 1:
            raise ValueError("lr_decay must lie in (0, 1] and lr_decay_period be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.dp_enabled:
            if not (self.clip > 0 and self.noise_multiplier > 0):
                raise ValueError("DP training needs clip > 0 and noise_multiplier > 0")
            if not 0 < self.delta < 1:
                raise ValueError("delta must lie in (0, 1)")
        if n is not None and self.batch_size > n:
            raise ValueError(f"batch_size {self.batch_size} exceeds dataset size {n}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_accuracy: float | None
    epsilon: float | None


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    steps: int = 0
    ledger_charges: int = 0
    epsilon: float | None = None
    delta: float | None = None
    best_order: int | None = None
    ledger: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Piecewise-constant decay: ``lr * decay ** (epoch // period)``."""
    return config.learning_rate * config.lr_decay ** (epoch // config.lr_decay_period)


class SGD:
    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        return theta - lr * grad


class Adam:
    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return theta - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, size: int):
    return Adam(size) if config.optimizer == "adam" else SGD()


def _flat(d_filters: np.ndarray, d_biases: np.ndarray) -> np.ndarray:
    return np.concatenate([d_filters, d_biases[..., None]], axis=2).reshape(-1)


def privatized_gradient(
    params: ModelParams,
    projections: ProjectionSet,
    X: np.ndarray,
    y: np.ndarray,
    clip: float,
    noise_multiplier: float,
    expected_batch: int,
    rng: np.random.Generator,
    debug_checks: bool = False,
):
    """Noisy mean gradient ``(sum_n clip(h_n) + N(0, sigma^2 C^2 I)) / L`` (flat layout).

    Returns ``(gradient, mean_loss)``, or ``(None, nan)`` for an empty batch.
    """
    if len(y) == 0:
        return None, float("nan")
    Z = projections.project_batch(X)
    coef, losses = G.batch_coefficients(params, Z, y)
    norms = G.batch_grad_norms(coef, Z)
    scale = G.clip_factor(norms, clip)
    if debug_checks:
        clipped = norms * scale
        assert np.all(clipped <= clip * (1 + 1e-9)), f"clipped norm {clipped.max()} exceeds C={clip}"
    d_f, d_b = G.weighted_grad_sum(coef, Z, scale)
    total = _flat(d_f, d_b)
    total += rng.normal(0.0, noise_multiplier * clip, size=total.shape)
    return total / expected_batch, float(losses.mean())


def mean_gradient(params: ModelParams, projections: ProjectionSet, X: np.ndarray, y: np.ndarray):
    """Plain (non-private) mean gradient over a batch, flat layout, and mean loss."""
    Z = projections.project_batch(X)
    coef, losses = G.batch_coefficients(params, Z, y)
    d_f, d_b = G.weighted_grad_sum(coef, Z, np.full(len(y), 1.0 / len(y)))
    return _flat(d_f, d_b), float(losses.mean())


def noisy_step(
    params: ModelParams,
    projections: ProjectionSet,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    optimizer=None,
    lr: float | None = None,
) -> tuple[ModelParams, bool]:
    """One DP update. Returns ``(new_params, taken)``; empty batches are skipped."""
    if not config.dp_enabled:
        raise ValueError("noisy_step requires dp_enabled")
    grad, _ = privatized_gradient(
        params, projections, X, y, config.clip, config.noise_multiplier,
        config.batch_size, rng, config.debug_checks,
    )
    if grad is None:
        return params, False
    optimizer = optimizer if optimizer is not None else SGD()
    lr = config.learning_rate if lr is None else lr
    return params.with_flat(optimizer.step(params.flat(), grad, lr)), True


def accuracy_of(params: ModelParams, projections: ProjectionSet, data: Dataset) -> float:
    return float(np.mean(predict_batch(params, projections, data.features) == data.labels))


def steps_per_epoch(n: int, config: TrainConfig) -> int:
    if config.dp_enabled:
        return max(1, int(round(n / config.batch_size)))
    return math.ceil(n / config.batch_size)


def train(
    dataset: Dataset,
    params: ModelParams,
    config: TrainConfig,
    test_set: Dataset | None = None,
    projections: ProjectionSet | None = None,
    on_epoch=None,
) -> tuple[ModelParams, TrainReport]:
    """Train from ``params``; DP when ``config.dp_enabled``.

    ``on_epoch`` is called with each ``EpochRecord`` as it completes.
    """
    n = len(dataset)
    config.validate(n)
    if dataset.dim != params.input_dim or dataset.num_classes > params.num_classes:
        raise ValueError(
            f"dataset (D={dataset.dim}, K={dataset.num_classes}) does not fit model "
            f"(D={params.input_dim}, K={params.num_classes})"
        )
    projections = projections if projections is not None else params.projections()
    sample_rng, noise_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(2))
    optimizer = make_optimizer(config, params.num_params)
    X, labels = dataset.features, dataset.labels
    report = TrainReport()
    ledger = None
    if config.dp_enabled:
        q = config.batch_size / n
        ledger = PrivacyLedger(q, config.noise_multiplier)
        report.delta = config.delta

    theta = params.flat()
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config)
        losses = []
        if config.dp_enabled:
            for _ in range(steps_per_epoch(n, config)):
                idx = poisson_subsample(n, ledger.q, sample_rng)
                grad, batch_loss = privatized_gradient(
                    params, projections, X[idx], labels[idx], config.clip,
                    config.noise_multiplier, config.batch_size, noise_rng, config.debug_checks,
                )
                if grad is None:
                    continue
                theta = optimizer.step(theta, grad, lr)
                params = params.with_flat(theta)
                ledger.charge()
                report.steps += 1
                report.ledger_charges += 1
                losses.append(batch_loss)
        else:
            perm = sample_rng.permutation(n)
            for lo in range(0, n, config.batch_size):
                idx = perm[lo:lo + config.batch_size]
                grad, batch_loss = mean_gradient(params, projections, X[idx], labels[idx])
                theta = optimizer.step(theta, grad, lr)
                params = params.with_flat(theta)
                report.steps += 1
                losses.append(batch_loss)

        eps = None
        if ledger is not None:
            eps = ledger.get_epsilon(config.delta)
            if not math.isfinite(eps):
                raise AccountantError(
                    f"privacy accounting failed after {ledger.steps} steps "
                    f"(q={ledger.q:.4g}, sigma={ledger.sigma}): epsilon not finite"
                )
        acc = accuracy_of(params, projections, test_set) if test_set is not None else None
        rec = EpochRecord(epoch + 1, float(np.mean(losses)) if losses else float("nan"), acc, eps)
        report.epochs.append(rec)
        log.info("epoch %d loss %.4f acc %s eps %s", rec.epoch, rec.train_loss, acc, eps)
        if on_epoch is not None:
            on_epoch(rec)

    if ledger is not None:
        report.epsilon = ledger.get_epsilon(config.delta)
        report.best_order = ledger.best_order(config.delta)
        report.ledger = ledger.state()
    return params, report
