"""Differentially private locally linear maps (DP-LLM)."""

from .accountant import PrivacyLedger, calibrate_sigma, compute_epsilon
from .data import Dataset, load_csv, load_idx
from .dp_optimizer import TrainConfig, TrainReport, train
from .model import ForwardTrace, ModelParams, forward, forward_batch, init_params, predict
from .projection import ProjectionSet, generate

__all__ = [
    "Dataset", "ForwardTrace", "ModelParams", "PrivacyLedger", "ProjectionSet", "TrainConfig", "TrainReport",
    "calibrate_sigma", "compute_epsilon", "forward", "forward_batch", "generate", "init_params", "load_csv",
    "load_idx", "predict", "train",
]

__version__ = "0.1.0"
