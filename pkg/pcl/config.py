"""
Experiment configuration for Pairwise Continual.

Handles loading, saving and validating experiment configs. JSON is the
shipped format; YAML files are accepted as well.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .data import DATASETS
from .errors import ConfigError
from .logger import parse_level
from .model import ArchitectureSpec, resolve_architecture
from .optimizer import OptimizerConfig

__all__ = [
    "ConfigError",
    "ConfigValidationError",
    "ExperimentConfig",
    "load_config",
    "save_config",
    "validate_config",
]


PROTOCOLS = ("split", "permuted")
HEAD_MODES = ("single", "multi")

DEFAULT_BATCH_SIZE = 64
DEFAULT_EVAL_EVERY = 100
DEFAULT_RUNS = {"split": 30, "permuted": 10}
DEFAULT_N_TASKS = {"split": 5, "permuted": 10}
DEFAULT_DATA_DIR = Path("data")
DEFAULT_RESULTS_DIR = Path("results")
DEFAULT_LOG_RETENTION_DAYS = 7

# Fields that change how a run executes but never what it computes.
RUNTIME_FIELDS = (
    "data_dir", "out_dir", "workers", "log_level", "log_retention_days",
    "progress", "save_checkpoints", "debug", "mirror_url",
)

# Scalar fields read from a file, with the types they must parse to.
INT_FIELDS = (
    "n_tasks", "batch_size", "runs", "master_seed", "eval_every", "workers", "log_retention_days",
)
BOOL_FIELDS = ("shuffle_task_order", "progress", "save_checkpoints", "debug")
STR_FIELDS = (
    "dataset", "protocol", "head_mode", "name", "log_level", "data_dir", "out_dir", "mirror_url",
)


@dataclass
class ExperimentConfig:
    """One benchmark experiment.

    Attributes:
        dataset: ``"mnist"`` or ``"fashion_mnist"``.
        protocol: ``"split"`` or ``"permuted"``.
        architecture: Network to build for every run.
        optimizer: Update rule and its constants.
        n_tasks: Number of tasks; always 5 for split.
        head_mode: ``"single"`` or ``"multi"``.
        batch_size: Training batch size.
        runs: Independent runs (seeds); 30 for split and 10 for permuted by default.
        master_seed: Root of every per-run seed.
        shuffle_task_order: Shuffle the split task order per run.
        eval_every: Training steps between overall accuracy evaluations.
        data_dir: Directory holding ``<dataset>/`` IDX files.
        out_dir: Where reports are written; defaults to ``results/<name>``.
        name: Experiment name used for the default output directory.
        workers: Processes used to execute runs in parallel.
        log_level: Console and file log level.
        log_retention_days: Number of days to keep old experiment logs.
        progress: Show a progress bar over training batches.
        save_checkpoints: Write each run's final network to ``out_dir``.
        debug: Check every activation and gradient for NaN/Inf.
        mirror_url: Alternative base URL for dataset downloads.
    """
    dataset: str
    protocol: str
    architecture: ArchitectureSpec
    optimizer: OptimizerConfig
    n_tasks: int | None = None
    head_mode: str = "single"
    batch_size: int = DEFAULT_BATCH_SIZE
    runs: int | None = None
    master_seed: int = 0
    shuffle_task_order: bool = True
    eval_every: int = DEFAULT_EVAL_EVERY
    data_dir: Path = field(default_factory=lambda: DEFAULT_DATA_DIR)
    out_dir: Path | None = None
    name: str = "experiment"
    workers: int = 1
    log_level: str = "INFO"
    log_retention_days: int = DEFAULT_LOG_RETENTION_DAYS
    progress: bool = False
    save_checkpoints: bool = False
    debug: bool = False
    mirror_url: str | None = None

    def __post_init__(self) -> None:
        """Fill protocol defaults and convert paths."""
        if self.n_tasks is None:
            self.n_tasks = DEFAULT_N_TASKS.get(self.protocol, 1)
        if self.runs is None:
            self.runs = DEFAULT_RUNS.get(self.protocol, 1)
        self.data_dir = Path(self.data_dir).expanduser().resolve()
        if self.out_dir is None:
            self.out_dir = DEFAULT_RESULTS_DIR / self.name
        self.out_dir = Path(self.out_dir).expanduser().resolve()

    def replace(self, **changes: Any) -> ExperimentConfig:
        """A copy with some fields changed."""
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        """Convert config to dictionary for serialization."""
        return {
            "name": self.name,
            "dataset": self.dataset,
            "protocol": self.protocol,
            "n_tasks": self.n_tasks,
            "head_mode": self.head_mode,
            "architecture": self.architecture.to_dict(),
            "optimizer": self.optimizer.to_dict(),
            "batch_size": self.batch_size,
            "runs": self.runs,
            "master_seed": self.master_seed,
            "shuffle_task_order": self.shuffle_task_order,
            "eval_every": self.eval_every,
            "data_dir": str(self.data_dir),
            "out_dir": str(self.out_dir),
            "workers": self.workers,
            "log_level": self.log_level,
            "log_retention_days": self.log_retention_days,
            "progress": self.progress,
            "save_checkpoints": self.save_checkpoints,
            "debug": self.debug,
            "mirror_url": self.mirror_url,
        }

    def experiment_dict(self) -> dict[str, Any]:
        """The fields that determine results, for the report's config echo."""
        data = self.to_dict()
        for key in RUNTIME_FIELDS:
            data.pop(key)
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentConfig:
        """Build a config from parsed JSON or YAML.

        Raises:
            ConfigError: On missing required or unknown fields, or a scalar
                of the wrong type.
        """
        if not isinstance(data, dict):
            raise ConfigError(f"Config must be an object, got {type(data).__name__}")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown config field(s): {', '.join(sorted(unknown))}")
        for field_name in ("dataset", "protocol", "architecture", "optimizer"):
            if field_name not in data:
                raise ConfigError(f"Missing required field: {field_name}")
        if not isinstance(data["optimizer"], dict):
            raise ConfigError("optimizer must be an object")
        _check_scalar_types(data)

        values = {k: v for k, v in data.items() if v is not None}
        values["architecture"] = resolve_architecture(data["architecture"])
        values["optimizer"] = OptimizerConfig.from_dict(data["optimizer"])
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError(f"Invalid config: {e}")


def _check_scalar_types(data: dict[str, Any]) -> None:
    """Reject scalars of the wrong JSON type; ``null`` means the default."""
    for key, value in data.items():
        if value is None:
            continue
        if key in INT_FIELDS:
            ok = isinstance(value, int) and not isinstance(value, bool)
            expected = "an integer"
        elif key in BOOL_FIELDS:
            ok, expected = isinstance(value, bool), "true or false"
        elif key in STR_FIELDS:
            ok, expected = isinstance(value, str), "a string"
        else:
            continue
        if not ok:
            raise ConfigError(f"{key} must be {expected}, got {value!r}")


class ConfigValidationError(Exception):
    """Raised when configuration validation fails."""

    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__(f"Configuration validation failed: {'; '.join(errors)}")


def validate_config(config: ExperimentConfig) -> list[str]:
    """Validate configuration values.

    Returns:
        List of validation error messages (empty if valid).
    """
    errors: list[str] = []

    if config.dataset not in DATASETS:
        errors.append(f"dataset must be one of {DATASETS}, got {config.dataset!r}")
    if config.protocol not in PROTOCOLS:
        errors.append(f"protocol must be one of {PROTOCOLS}, got {config.protocol!r}")
    elif config.protocol == "split" and config.n_tasks != 5:
        errors.append(f"split protocol has exactly 5 tasks, got n_tasks={config.n_tasks}")
    if config.n_tasks is None or config.n_tasks < 1:
        errors.append(f"n_tasks must be >= 1, got {config.n_tasks}")
    if config.head_mode not in HEAD_MODES:
        errors.append(f"head_mode must be one of {HEAD_MODES}, got {config.head_mode!r}")

    if config.batch_size < 1:
        errors.append(f"batch_size must be >= 1, got {config.batch_size}")
    if config.runs is None or config.runs < 1:
        errors.append(f"runs must be >= 1, got {config.runs}")
    if config.master_seed < 0:
        errors.append(f"master_seed must be non-negative, got {config.master_seed}")
    if config.eval_every < 1:
        errors.append(f"eval_every must be >= 1, got {config.eval_every}")
    if config.workers < 1:
        errors.append(f"workers must be >= 1, got {config.workers}")
    if config.log_retention_days < 1:
        errors.append(f"Log retention days must be positive: {config.log_retention_days}")
    try:
        parse_level(config.log_level)
    except ValueError as e:
        errors.append(str(e))

    errors.extend(config.architecture.validate())
    if config.architecture.n_classes != 10:
        errors.append(f"datasets have 10 classes, architecture has {config.architecture.n_classes}")
    errors.extend(config.optimizer.validate())
    return errors


def _read(path: Path) -> Any:
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        return yaml.safe_load(text) or {}
    return json.loads(text)


def load_config(config_path: Path | str) -> ExperimentConfig:
    """Load and validate an experiment config.

    Args:
        config_path: A ``.json``, ``.yaml`` or ``.yml`` file.

    Raises:
        ConfigError: If the file doesn't exist, cannot be parsed or has
            unknown fields.
        ConfigValidationError: If values are out of range.
    """
    config_path = Path(config_path).expanduser().resolve()

    if not config_path.exists():
        raise ConfigError(f"Configuration file not found: {config_path}")

    try:
        data = _read(config_path)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in config file {config_path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in config file {config_path}: {e}")
    except OSError as e:
        raise ConfigError(f"Cannot read config file: {e}")

    if isinstance(data, dict) and "name" not in data:
        data["name"] = config_path.stem
    config = ExperimentConfig.from_dict(data)

    errors = validate_config(config)
    if errors:
        raise ConfigValidationError(errors)
    return config


def save_config(config: ExperimentConfig, config_path: Path | str) -> None:
    """Save a config as JSON, or YAML when the suffix says so.

    Raises:
        ConfigError: If the config file cannot be written.
    """
    config_path = Path(config_path).expanduser().resolve()
    config_path.parent.mkdir(parents=True, exist_ok=True)

    try:
        with open(config_path, "w", encoding="utf-8") as f:
            if config_path.suffix in (".yaml", ".yml"):
                yaml.safe_dump(config.to_dict(), f, default_flow_style=False, sort_keys=False)
            else:
                json.dump(config.to_dict(), f, indent=2)
                f.write("\n")
    except OSError as e:
        raise ConfigError(f"Cannot write config file: {e}")
