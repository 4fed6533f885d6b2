# Copyright (c) 2025 CoReason, Inc.
#
# This software is proprietary and dual-licensed.
# Licensed under the Prosperity Public License 3.0 (the "License").
# A copy of the license is available at https://prosperitylicense.com/versions/3.0.0
# For details, see the LICENSE file.
# Commercial use beyond a 30-day trial requires a separate license.
#
# Source Code: https://github.com/CoReason-AI/coreason_ising_pruning

"""
Run configuration: defaults, the flat ``key = value`` file format, and CLI overrides.

Precedence is defaults < config file < command-line flags.
"""

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional, Tuple

import fsspec
from loguru import logger

from coreason_ising_pruning.exceptions import ConfigError, ParseError, UsageError
from coreason_ising_pruning.ising.graph import BALANCE_MODES, LAYER

SYNTHETIC = "synthetic"
IDX_PREFIX = "idx:"
OPTIMIZERS = ("sgd",)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    pop_size: int = 8
    mutation_factor: float = 0.5
    crossover: float = 0.5
    seed: int = 0
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-5
    lr_step_epochs: int = 0
    lr_gamma: float = 0.1
    optimizer: str = "sgd"
    early_threshold: float = 0.0
    patience: int = 1
    kl_epsilon: float = 1e-6
    kl_ceiling: Optional[float] = 1.0
    balance: str = LAYER
    dataset: str = SYNTHETIC
    test_dataset: Optional[str] = None
    data_seed: int = 1234
    classes: int = 4
    samples_per_class: int = 500
    test_samples_per_class: int = 100
    image_size: int = 16
    noise: float = 0.1
    eval_batch_size: int = 256
    runs: int = 5
    out: str = "run"
    cli_audit: Dict[str, List[str]] = field(default_factory=dict)

    def validate(self) -> "TrainConfig":
        """
        Check every value range.

        Raises:
            ConfigError: On the first invalid value.
        """
        checks: List[Tuple[bool, str]] = [
            (self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}"),
            (self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (self.pop_size >= 4, f"pop_size must be >= 4, got {self.pop_size}"),
            (0.0 <= self.mutation_factor <= 1.0, f"mutation_factor must be in [0, 1], got {self.mutation_factor}"),
            (0.0 <= self.crossover <= 1.0, f"crossover must be in [0, 1], got {self.crossover}"),
            (self.seed >= 0, f"seed must be >= 0, got {self.seed}"),
            (self.learning_rate > 0.0, f"learning_rate must be > 0, got {self.learning_rate}"),
            (0.0 <= self.momentum < 1.0, f"momentum must be in [0, 1), got {self.momentum}"),
            (self.weight_decay >= 0.0, f"weight_decay must be >= 0, got {self.weight_decay}"),
            (self.lr_step_epochs >= 0, f"lr_step_epochs must be >= 0, got {self.lr_step_epochs}"),
            (0.0 < self.lr_gamma <= 1.0, f"lr_gamma must be in (0, 1], got {self.lr_gamma}"),
            (self.optimizer in OPTIMIZERS, f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}"),
            (self.early_threshold >= 0.0, f"early_threshold must be >= 0, got {self.early_threshold}"),
            (self.patience >= 1, f"patience must be >= 1, got {self.patience}"),
            (self.kl_epsilon > 0.0, f"kl_epsilon must be > 0, got {self.kl_epsilon}"),
            (
                self.kl_ceiling is None or self.kl_ceiling > 0.0,
                f"kl_ceiling must be > 0 when set, got {self.kl_ceiling}",
            ),
            (self.balance in BALANCE_MODES, f"balance must be one of {BALANCE_MODES}, got {self.balance!r}"),
            (self.classes >= 2, f"classes must be >= 2, got {self.classes}"),
            (self.samples_per_class >= 0, f"samples_per_class must be >= 0, got {self.samples_per_class}"),
            (
                self.test_samples_per_class >= 0,
                f"test_samples_per_class must be >= 0, got {self.test_samples_per_class}",
            ),
            (self.image_size >= 4, f"image_size must be >= 4, got {self.image_size}"),
            (self.noise >= 0.0, f"noise must be >= 0, got {self.noise}"),
            (self.eval_batch_size >= 1, f"eval_batch_size must be >= 1, got {self.eval_batch_size}"),
            (self.runs >= 1, f"runs must be >= 1, got {self.runs}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        parse_dataset_selector(self.dataset)
        if self.test_dataset is not None:
            parse_dataset_selector(self.test_dataset)
        return self

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        if math.isinf(values["early_threshold"]):
            values["early_threshold"] = "inf"
        return values


CONFIG_KEYS: Tuple[str, ...] = tuple(f.name for f in fields(TrainConfig) if f.name != "cli_audit")
_OPTIONAL_KEYS = frozenset({"kl_ceiling", "test_dataset"})


def parse_dataset_selector(selector: str) -> Optional[Tuple[str, str]]:
    """
    ``synthetic`` -> None; ``idx:<images>,<labels>`` -> the two paths.

    Raises:
        ConfigError: For any other selector.
    """
    if selector == SYNTHETIC:
        return None
    if selector.startswith(IDX_PREFIX):
        paths = selector[len(IDX_PREFIX) :].split(",")
        if len(paths) == 2 and all(p.strip() for p in paths):
            return paths[0].strip(), paths[1].strip()
    raise ConfigError(f"dataset must be '{SYNTHETIC}' or 'idx:<images>,<labels>', got {selector!r}")


def _field_type(key: str) -> type:
    defaults = TrainConfig()
    value = getattr(defaults, key)
    if value is None:
        return float if key == "kl_ceiling" else str
    return type(value)


def coerce_value(key: str, raw: str) -> Any:
    """
    Convert a textual value to the type of ``key``.

    Raises:
        UsageError: If ``key`` is not a configuration key.
        ConfigError: If the text does not parse as the key's type.
    """
    if key not in CONFIG_KEYS:
        raise UsageError(f"unknown configuration key {key!r}; valid keys: {', '.join(CONFIG_KEYS)}")
    text = raw.strip()
    if key in _OPTIONAL_KEYS and text.lower() in ("none", ""):
        return None
    target = _field_type(key)
    try:
        if target is int:
            return int(text)
        if target is float:
            return float(text)
    except ValueError as e:
        raise ConfigError(f"{key} expects {target.__name__}, got {text!r}") from e
    return text


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse ``key = value`` lines; ``#`` starts a comment and blank lines are skipped.

    Raises:
        ParseError: On a malformed line (offset is the 1-based line number).
        UsageError: On an unknown key.
    """
    values: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, raw = content.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"malformed configuration line {number}: {line.strip()!r}", offset=number)
        values[key.strip()] = coerce_value(key.strip(), raw)
    return values


def load_config_file(path: str) -> Dict[str, Any]:
    with fsspec.open(path, "r") as f:
        text = f.read()
    values = parse_config_text(text)
    logger.info(f"Loaded {len(values)} configuration values from {path}")
    return values


def build_config(
    file_values: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    audit: Optional[Mapping[str, List[str]]] = None,
) -> TrainConfig:
    """Layer file values then CLI overrides over the defaults and validate the result."""
    merged: Dict[str, Any] = {}
    for layer in (file_values or {}, overrides or {}):
        for key, value in layer.items():
            if key not in CONFIG_KEYS:
                raise UsageError(f"unknown configuration key {key!r}; valid keys: {', '.join(CONFIG_KEYS)}")
            merged[key] = value
    config = TrainConfig(**merged, cli_audit={k: list(v) for k, v in (audit or {}).items()})
    return config.validate()
