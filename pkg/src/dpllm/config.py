"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, keys are the ``RunConfig`` field
names.  On the command line every key is also accepted as ``--kebab-case``.
Precedence: defaults < config file < ``DPLLM_SEED`` < command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path

from .dp_optimizer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data
    data_format: str = "idx"  # idx | csv
    data_dir: str = ""  # directory holding the standard MNIST-style IDX file names
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    train_csv: str = ""
    test_csv: str = ""
    feature_cols: str = ""  # comma separated; empty means all non-label columns
    label_cols: str = "hypertension,diabetes,fatty_liver"
    keep_top: int = 4
    test_fraction: float = 0.1
    split_seed: int = 0
    # model
    num_filters: int = 30
    proj_dim: int = 300  # 0 disables random projections
    beta: float = 1 / 30
    init_scale: float = 0.01
    # training
    batch_size: int = 500
    epochs: int = 20
    learning_rate: float = 0.001
    lr_decay: float = 0.8
    lr_decay_period: int = 5
    optimizer: str = "adam"
    dp_enabled: bool = True
    clip: float = 0.001
    noise_multiplier: float = 1.3
    target_epsilon: float = 0.0  # > 0 calibrates noise_multiplier instead
    delta: float = 1e-5
    seed: int = 0
    debug_checks: bool = False
    # output
    out_dir: str = "run"

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, learning_rate=self.learning_rate,
            lr_decay=self.lr_decay, lr_decay_period=self.lr_decay_period, optimizer=self.optimizer,
            dp_enabled=self.dp_enabled, clip=self.clip, noise_multiplier=self.noise_multiplier,
            delta=self.delta, seed=self.seed, debug_checks=self.debug_checks,
        )

    def validate(self) -> None:
        if self.data_format not in ("idx", "csv"):
            raise ConfigError(f"data_format must be idx or csv, got {self.data_format!r}")
        if self.data_format == "idx":
            explicit = [self.train_images, self.train_labels, self.test_images, self.test_labels]
            if not self.data_dir and not all(explicit):
                raise ConfigError("idx data needs data_dir or all of train_images, train_labels, test_images, test_labels")
        elif not self.train_csv:
            raise ConfigError("csv data needs train_csv")
        if self.proj_dim < 0:
            raise ConfigError("proj_dim must be >= 0")
        self.train_config().validate()

    def dumps(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key} ({kind})") from None
    return raw


def parse_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def parse_flags(tokens: list[str]) -> dict:
    """``["--batch-size", "500", "--dp-enabled=false"]`` -> {"batch_size": 500, ...}."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        name, eq, value = tok[2:].partition("=")
        key = name.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ConfigError(f"unknown option --{name}")
        if not eq:
            if i + 1 >= len(tokens):
                raise ConfigError(f"option --{name} needs a value")
            value = tokens[i + 1]
            i += 1
        out[key] = _coerce(key, value)
        i += 1
    return out


def build(config_path=None, flags: list[str] | None = None, env=None) -> RunConfig:
    env = os.environ if env is None else env
    values = {}
    if config_path:
        values.update(parse_text(Path(config_path).read_text()))
    if env.get("DPLLM_SEED"):
        values["seed"] = _coerce("seed", env["DPLLM_SEED"])
    values.update(parse_flags(flags or []))
    return RunConfig(**values)
