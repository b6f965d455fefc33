"""Test metrics and (epsilon | M | D') sweeps with restarts."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .accountant import calibrate_sigma
from .data import Dataset
from .dp_optimizer import TrainConfig, steps_per_epoch, train
from .model import ModelParams, init_params, predict_batch
from .projection import ProjectionSet

log = logging.getLogger(__name__)

AXES = ("epsilon", "num_filters", "proj_dim")


def _check_labels(params: ModelParams, test_set: Dataset) -> None:
    if len(test_set) == 0:
        raise ValueError("empty test set")
    if test_set.labels.max() >= params.num_classes:
        raise ValueError(f"test label {test_set.labels.max()} out of range for {params.num_classes} classes")


def accuracy(params: ModelParams, projections: ProjectionSet, test_set: Dataset) -> float:
    _check_labels(params, test_set)
    return float(np.mean(predict_batch(params, projections, test_set.features) == test_set.labels))


def confusion_matrix(params: ModelParams, projections: ProjectionSet, test_set: Dataset) -> np.ndarray:
    """Counts indexed [true class, predicted class]."""
    _check_labels(params, test_set)
    pred = predict_batch(params, projections, test_set.features)
    K = params.num_classes
    return np.bincount(test_set.labels * K + pred, minlength=K * K).reshape(K, K)


def restart_seed(base_seed: int, point: int, restart: int) -> int:
    """63-bit seed from the first 8 bytes of sha256("<base>:<point>:<restart>")."""
    digest = hashlib.sha256(f"{base_seed}:{point}:{restart}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class ModelSpec:
    num_filters: int = 30
    proj_dim: int | None = 300  # None disables projections
    beta: float = 1 / 30


@dataclass
class SweepPoint:
    value: float
    accuracies: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.errors

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def std(self) -> float:
        if len(self.accuracies) <= 1:
            return 0.0
        return float(np.std(self.accuracies, ddof=1))


@dataclass
class SweepResult:
    axis: str
    points: list
    restarts: int
    base_config: dict

    def table(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.axis, "mean_accuracy", "std_accuracy", "restarts", "mean_epsilon", "complete"])
        for p in self.points:
            eps = repr(float(np.mean(p.epsilons))) if p.epsilons else ""
            w.writerow([p.value, repr(p.mean), repr(p.std), len(p.accuracies), eps, int(p.complete)])
        return buf.getvalue()


def run_point(train_set: Dataset, test_set: Dataset, model: ModelSpec, config: TrainConfig, seed: int):
    """Train one model from ``seed`` and return ``(accuracy, epsilon)``."""
    params = init_params(
        train_set.num_classes, model.num_filters, train_set.dim, model.proj_dim, model.beta, seed=seed,
    )
    projections = params.projections()
    params, report = train(train_set, params, replace(config, seed=seed), projections=projections)
    return accuracy(params, projections, test_set), report.epsilon


def sweep(
    axis: str,
    grid,
    train_set: Dataset,
    test_set: Dataset,
    model: ModelSpec,
    config: TrainConfig,
    restarts: int = 1,
    base_seed: int = 0,
) -> SweepResult:
    """Train ``restarts`` models per grid value along ``axis``.

    For the ``epsilon`` axis the noise multiplier is calibrated per point from
    the training set size, batch size and epoch count.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    if restarts < 1 or len(grid) < 1:
        raise ValueError("need at least one grid value and one restart")
    points = []
    for i, value in enumerate(grid):
        point = SweepPoint(value)
        m, cfg = model, config
        try:
            if axis == "num_filters":
                m = replace(model, num_filters=int(value))
            elif axis == "proj_dim":
                m = replace(model, proj_dim=None if value is None else int(value))
            else:
                q = cfg.batch_size / len(train_set)
                steps = cfg.epochs * steps_per_epoch(len(train_set), cfg)
                cfg = replace(cfg, dp_enabled=True, noise_multiplier=calibrate_sigma(q, steps, cfg.delta, float(value)))
        except Exception as exc:  # recorded, point marked incomplete
            point.errors.append(repr(exc))
            points.append(point)
            continue
        for r in range(restarts):
            seed = restart_seed(base_seed, i, r)
            point.seeds.append(seed)
            try:
                acc, eps = run_point(train_set, test_set, m, cfg, seed)
            except Exception as exc:
                log.warning("sweep point %s restart %d failed: %r", value, r, exc)
                point.errors.append(repr(exc))
                continue
            point.accuracies.append(acc)
            if eps is not None:
                point.epsilons.append(eps)
        points.append(point)
    return SweepResult(axis, points, restarts, {"model": model.__dict__, "config": config.__dict__})
