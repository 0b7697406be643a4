"""
Fallchain Configuration Management

Handles configuration validation, layered overrides (file < environment <
command line) and parameter management for every pipeline stage.
"""

import os
import yaml
import logging
from typing import Any, Dict, List, Mapping, Optional
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

from fallchain.signal_io import SensorScale
from fallchain.utils.exceptions import ParameterValidationError, UnknownConfigKey

logger = logging.getLogger(__name__)

ENV_PREFIX = "FALLCHAIN_"

CELL_KINDS = ("simple_tanh", "gated")
FILTER_NAMES = ("ewma", "savgol")
REGRESSOR_KINDS = ("knn", "decision_tree", "random_forest", "mlp")
FEATURE_MODES = ("raw", "engineered")
VISION_CLASSIFIERS = ("logistic", "random_forest")


def _raise_if(errors: List[str], section: str) -> None:
    if errors:
        raise ParameterValidationError(
            f"Parameter validation failed [{section}]: {'; '.join(errors)}"
        )


def _check_keys(cls, data: Mapping[str, Any], section: str) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise UnknownConfigKey(
            f"Unknown key(s) in [{section}]: {', '.join(unknown)}. "
            f"Available: {', '.join(sorted(known))}"
        )


class _Section:
    """Shared dict conversion for configuration sections."""

    SECTION = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]):
        data = dict(data or {})
        _check_keys(cls, data, cls.SECTION)
        return cls(**data)


@dataclass
class SignalConfig(_Section):
    """Sensor conversion constants and the SisFall column selector."""

    SECTION = "signal"

    accel_range: float = 16.0
    accel_resolution: int = 13
    gyro_range: float = 2000.0
    gyro_resolution: int = 16
    # accelerometer 1 (x, y, z) then gyroscope (x, y, z) of the 9-column row
    columns: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4, 5])
    source_rate_hz: float = 200.0
    packet_interval_s: float = 0.5

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.accel_range <= 0:
            errors.append("accel_range must be positive")
        if self.gyro_range <= 0:
            errors.append("gyro_range must be positive")
        for name in ("accel_resolution", "gyro_resolution"):
            value = getattr(self, name)
            if not (1 <= int(value) <= 32):
                errors.append(f"{name} must be between 1 and 32")
        if len(self.columns) != 6:
            errors.append("columns must select exactly 6 of the 9 raw columns")
        elif any(not (0 <= int(c) < 9) for c in self.columns):
            errors.append("columns must index 0..8")
        elif len(set(self.columns)) != 6:
            errors.append("columns must be distinct")
        if self.source_rate_hz <= 0:
            errors.append("source_rate_hz must be positive")
        if self.packet_interval_s <= 0:
            errors.append("packet_interval_s must be positive")
        _raise_if(errors, self.SECTION)

    @property
    def accel_scale(self) -> SensorScale:
        return SensorScale(self.accel_range, int(self.accel_resolution))

    @property
    def gyro_scale(self) -> SensorScale:
        return SensorScale(self.gyro_range, int(self.gyro_resolution))


@dataclass
class PreprocConfig(_Section):
    """Cleaning pipeline for IMU traces (resample, filter, window, normalize)."""

    SECTION = "preproc"

    resample_hz: float = 50.0
    window_len: int = 40
    step: int = 10
    ewma_alpha: float = 0.3
    savgol_window: int = 5
    savgol_order: int = 2
    ewma_enabled: bool = True
    savgol_enabled: bool = True
    filter_order: List[str] = field(default_factory=lambda: ["ewma", "savgol"])
    trim_falls: bool = True
    # samples kept on each side of the impact; None means 2 * window_len
    trim_margin: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.resample_hz <= 0:
            errors.append("resample_hz must be positive")
        if self.window_len < 2:
            errors.append("window_len must be >= 2")
        if self.step < 1:
            errors.append("step must be >= 1")
        if not (0 < self.ewma_alpha <= 1):
            errors.append("ewma_alpha must be in (0, 1]")
        if self.savgol_window < 1 or self.savgol_window % 2 == 0:
            errors.append("savgol_window must be a positive odd count")
        if self.savgol_order < 0 or self.savgol_order >= self.savgol_window:
            errors.append("savgol_order must be >= 0 and < savgol_window")
        unknown = [name for name in self.filter_order if name not in FILTER_NAMES]
        if unknown:
            errors.append(f"filter_order has unknown filters {unknown}; available {list(FILTER_NAMES)}")
        if len(set(self.filter_order)) != len(self.filter_order):
            errors.append("filter_order must not repeat a filter")
        if self.trim_margin is not None and self.trim_margin < 0:
            errors.append("trim_margin must be non-negative")
        _raise_if(errors, self.SECTION)

    @property
    def effective_trim_margin(self) -> int:
        return 2 * self.window_len if self.trim_margin is None else int(self.trim_margin)

    def enabled_filters(self) -> List[str]:
        flags = {"ewma": self.ewma_enabled, "savgol": self.savgol_enabled}
        return [name for name in self.filter_order if flags[name]]


@dataclass
class TrainConfig(_Section):
    """Optimizer and architecture settings for the recurrent models."""

    SECTION = "train"

    learning_rate: float = 0.05
    epochs: int = 1
    # None trains full-batch
    batch_size: Optional[int] = 32
    seed: int = 0
    cell_kind: str = "gated"
    hidden_sizes: List[int] = field(default_factory=lambda: [32, 16, 8])
    head_sizes: List[int] = field(default_factory=lambda: [16])
    classifier_learning_rate: float = 0.1
    classifier_batch_size: Optional[int] = 32

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if not self.learning_rate > 0:
            errors.append("learning_rate must be positive")
        if not self.classifier_learning_rate > 0:
            errors.append("classifier_learning_rate must be positive")
        if self.epochs < 1:
            errors.append("epochs must be >= 1")
        for name in ("batch_size", "classifier_batch_size"):
            value = getattr(self, name)
            if value is not None and value < 1:
                errors.append(f"{name} must be >= 1 or null for full batch")
        if self.cell_kind not in CELL_KINDS:
            errors.append(f"cell_kind must be one of {list(CELL_KINDS)}")
        if len(self.hidden_sizes) != 3 or any(h < 1 for h in self.hidden_sizes):
            errors.append("hidden_sizes must list three positive sizes")
        if any(h < 1 for h in self.head_sizes):
            errors.append("head_sizes must be positive")
        _raise_if(errors, self.SECTION)


@dataclass
class FedConfig(_Section):
    """Semi-supervised protocol: splits, rounds and classifier epochs."""

    SECTION = "fed"

    rounds: int = 50
    central_epochs: int = 50
    classifier_epochs: int = 50
    labeled_fraction: float = 0.3
    train_fraction: float = 0.85

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        for name in ("rounds", "central_epochs", "classifier_epochs"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be non-negative")
        if not (0 < self.labeled_fraction < 1):
            errors.append("labeled_fraction must be in (0, 1)")
        if not (0 < self.train_fraction <= 1):
            errors.append("train_fraction must be in (0, 1]")
        _raise_if(errors, self.SECTION)


@dataclass
class FingerprintConfig(_Section):
    SECTION = "fingerprint"

    floor_dbm: float = -100.0
    block_size: int = 8
    occupied_threshold: float = 0.2
    free_threshold: float = 0.8

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.floor_dbm > 0:
            errors.append("floor_dbm must be <= 0")
        if self.block_size < 1:
            errors.append("block_size must be >= 1")
        if not (0 <= self.occupied_threshold < self.free_threshold <= 1):
            errors.append("thresholds must satisfy 0 <= occupied < free <= 1")
        _raise_if(errors, self.SECTION)


@dataclass
class LocConfig(_Section):
    """Localization regressors; defaults are common choices, not measured ones."""

    SECTION = "loc"

    kind: str = "random_forest"
    features: str = "engineered"
    floor_dbm: float = -100.0
    knn_k: int = 5
    tree_max_depth: int = 12
    tree_leaf_min: int = 2
    forest_trees: int = 50
    forest_bootstrap: float = 1.0
    # "sqrt", "all" or an integer count
    forest_max_features: Any = "sqrt"
    mlp_hidden: List[int] = field(default_factory=lambda: [32, 16])
    mlp_epochs: int = 200
    mlp_learning_rate: float = 0.01
    mlp_batch_size: int = 32
    test_fraction: float = 0.2

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.kind not in REGRESSOR_KINDS:
            errors.append(f"kind must be one of {list(REGRESSOR_KINDS)}")
        if self.features not in FEATURE_MODES:
            errors.append(f"features must be one of {list(FEATURE_MODES)}")
        if self.floor_dbm > 0:
            errors.append("floor_dbm must be <= 0")
        if self.knn_k < 1:
            errors.append("knn_k must be >= 1")
        if self.tree_max_depth < 1:
            errors.append("tree_max_depth must be >= 1")
        if self.tree_leaf_min < 1:
            errors.append("tree_leaf_min must be >= 1")
        if self.forest_trees < 1:
            errors.append("forest_trees must be >= 1")
        if not (0 < self.forest_bootstrap <= 1.0):
            errors.append("forest_bootstrap must be in (0, 1]")
        if not (self.forest_max_features in ("sqrt", "all")
                or (isinstance(self.forest_max_features, int) and self.forest_max_features >= 1)):
            errors.append("forest_max_features must be 'sqrt', 'all' or a positive integer")
        if any(h < 1 for h in self.mlp_hidden):
            errors.append("mlp_hidden sizes must be positive")
        if self.mlp_epochs < 1:
            errors.append("mlp_epochs must be >= 1")
        if not self.mlp_learning_rate > 0:
            errors.append("mlp_learning_rate must be positive")
        if self.mlp_batch_size < 1:
            errors.append("mlp_batch_size must be >= 1")
        if not (0 < self.test_fraction < 1):
            errors.append("test_fraction must be in (0, 1)")
        _raise_if(errors, self.SECTION)


@dataclass
class VisionConfig(_Section):
    SECTION = "vision"

    classifier: str = "logistic"
    iou_threshold: float = 0.5
    relevant_classes: List[str] = field(default_factory=lambda: ["person", "chair", "bed", "couch"])
    support_classes: List[str] = field(default_factory=lambda: ["chair", "bed", "couch"])
    min_confidence: float = 0.0
    logistic_learning_rate: float = 0.5
    logistic_epochs: int = 2000
    forest_trees: int = 50
    forest_max_depth: int = 8
    forest_leaf_min: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.classifier not in VISION_CLASSIFIERS:
            errors.append(f"classifier must be one of {list(VISION_CLASSIFIERS)}")
        if not (0 < self.iou_threshold <= 1):
            errors.append("iou_threshold must be in (0, 1]")
        if "person" not in self.relevant_classes:
            errors.append("relevant_classes must include 'person'")
        if not set(self.support_classes) <= set(self.relevant_classes):
            errors.append("support_classes must be a subset of relevant_classes")
        if not (0 <= self.min_confidence <= 1):
            errors.append("min_confidence must be in [0, 1]")
        if not self.logistic_learning_rate > 0:
            errors.append("logistic_learning_rate must be positive")
        if self.logistic_epochs < 1:
            errors.append("logistic_epochs must be >= 1")
        if self.forest_trees < 1 or self.forest_max_depth < 1 or self.forest_leaf_min < 1:
            errors.append("forest settings must be positive")
        _raise_if(errors, self.SECTION)


@dataclass
class MissionConfig(_Section):
    """Navigation model, retry policy and per-stage failure rates."""

    SECTION = "mission"

    nav_success_p: float = 0.95
    nav_max_retries: int = 1
    cooldown_s: float = 5.0
    detect_fail: float = 0.0081
    nav_fail: float = 0.05
    vision_fail: float = 0.0367

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        for name in ("nav_success_p", "detect_fail", "nav_fail", "vision_fail"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                errors.append(f"{name} must be in [0, 1]")
        if self.nav_max_retries < 0:
            errors.append("nav_max_retries must be non-negative")
        if self.cooldown_s < 0:
            errors.append("cooldown_s must be non-negative")
        _raise_if(errors, self.SECTION)


SECTIONS = {
    "signal": SignalConfig,
    "preproc": PreprocConfig,
    "train": TrainConfig,
    "fed": FedConfig,
    "fingerprint": FingerprintConfig,
    "loc": LocConfig,
    "vision": VisionConfig,
    "mission": MissionConfig,
}
TOP_LEVEL = {"seed": int, "jobs": int, "log_level": str}


@dataclass
class RunConfig:
    """Fully resolved configuration tree for one CLI invocation."""

    seed: int = 0
    jobs: int = 1
    log_level: str = "info"
    signal: SignalConfig = field(default_factory=SignalConfig)
    preproc: PreprocConfig = field(default_factory=PreprocConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fed: FedConfig = field(default_factory=FedConfig)
    fingerprint: FingerprintConfig = field(default_factory=FingerprintConfig)
    loc: LocConfig = field(default_factory=LocConfig)
    vision: VisionConfig = field(default_factory=VisionConfig)
    mission: MissionConfig = field(default_factory=MissionConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        errors = []
        if self.seed < 0:
            errors.append("seed must be non-negative")
        if self.jobs < 1:
            errors.append("jobs must be >= 1")
        if str(self.log_level).lower() not in ("debug", "info", "warning", "error"):
            errors.append("log_level must be debug, info, warning or error")
        _raise_if(errors, "run")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"seed": self.seed, "jobs": self.jobs, "log_level": self.log_level}
        for name in SECTIONS:
            data[name] = getattr(self, name).to_dict()
        return data

    @classmethod
    def from_dict(cls, data: Optional[Mapping[str, Any]]) -> "RunConfig":
        data = dict(data or {})
        unknown = sorted(set(data) - set(SECTIONS) - set(TOP_LEVEL))
        if unknown:
            raise UnknownConfigKey(
                f"Unknown configuration section(s): {', '.join(unknown)}. "
                f"Available: {', '.join(list(TOP_LEVEL) + list(SECTIONS))}"
            )
        kwargs: Dict[str, Any] = {}
        for name, kind in TOP_LEVEL.items():
            if name in data:
                kwargs[name] = kind(data[name])
        for name, section_cls in SECTIONS.items():
            section = data.get(name)
            if section is not None and not isinstance(section, Mapping):
                raise ParameterValidationError(f"Section [{name}] must be a mapping")
            kwargs[name] = section_cls.from_dict(section)
        return cls(**kwargs)


def _merge(base: Dict[str, Any], layer: Mapping[str, Any], origin: str) -> Dict[str, Any]:
    merged = {key: (dict(value) if isinstance(value, dict) else value) for key, value in base.items()}
    for key, value in layer.items():
        if key in TOP_LEVEL:
            merged[key] = value
        elif key in SECTIONS:
            if not isinstance(value, Mapping):
                raise ParameterValidationError(f"{origin}: section [{key}] must be a mapping")
            _check_keys(SECTIONS[key], value, key)
            merged[key].update(value)
        else:
            raise UnknownConfigKey(f"{origin}: unknown configuration key {key!r}")
    return merged


def _parse_scalar(text: str) -> Any:
    return yaml.safe_load(text) if text != "" else ""


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Collect ``FALLCHAIN_*`` variables into a nested override mapping.

    ``FALLCHAIN_SEED=3`` sets a top-level key, ``FALLCHAIN_TRAIN__LEARNING_RATE=0.01``
    sets ``train.learning_rate``.
    """
    environ = os.environ if environ is None else environ
    layer: Dict[str, Any] = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        value = _parse_scalar(environ[name])
        if "__" in key:
            section, option = key.split("__", 1)
            layer.setdefault(section, {})[option] = value
        else:
            layer[key] = value
    return layer


def dotted_overrides(assignments: List[str]) -> Dict[str, Any]:
    """Turn ``["train.learning_rate=0.01", "seed=4"]`` into an override mapping."""
    layer: Dict[str, Any] = {}
    for item in assignments:
        if "=" not in item:
            raise ParameterValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip().lower()
        parsed = _parse_scalar(value.strip())
        if "." in key:
            section, option = key.split(".", 1)
            layer.setdefault(section, {})[option] = parsed
        else:
            layer[key] = parsed
    return layer


class FallchainConfig:
    """Main configuration manager: loads, layers and saves RunConfig trees."""

    def __init__(self, config_file: Optional[Path] = None):
        self.config_file = config_file
        self.run_config: Optional[RunConfig] = None
        self.logger = logging.getLogger(__name__)

    def read_file(self, config_file: Path) -> Dict[str, Any]:
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                data = yaml.safe_load(f) or {}
        except OSError as e:
            raise ParameterValidationError(f"Cannot read configuration {config_file}: {e}")
        except yaml.YAMLError as e:
            raise ParameterValidationError(f"Invalid YAML in {config_file}: {e}")
        if not isinstance(data, Mapping):
            raise ParameterValidationError(f"{config_file}: top level must be a mapping")
        return dict(data)

    def resolve(self,
                environ: Optional[Mapping[str, str]] = None,
                flags: Optional[Mapping[str, Any]] = None) -> RunConfig:
        """
        Resolve the configuration: defaults < file < environment < flags.

        Args:
            environ: Environment mapping (defaults to ``os.environ``)
            flags: Override mapping built from command-line flags

        Returns:
            Validated RunConfig
        """
        merged = RunConfig().to_dict()
        if self.config_file is not None:
            merged = _merge(merged, self.read_file(self.config_file), str(self.config_file))
        merged = _merge(merged, env_overrides(environ), "environment")
        if flags:
            merged = _merge(merged, flags, "command line")
        self.run_config = RunConfig.from_dict(merged)
        self.logger.debug(f"Resolved configuration: {self.run_config.to_dict()}")
        return self.run_config

    def save_config(self, config_file: Path, run_config: RunConfig) -> None:
        """
        Save configuration to YAML file.

        Args:
            config_file: Path to save configuration
            run_config: Configuration to save
        """
        try:
            config_file.parent.mkdir(parents=True, exist_ok=True)
            with open(config_file, 'w', encoding='utf-8') as f:
                yaml.dump(run_config.to_dict(), f, default_flow_style=False, indent=2)
            self.logger.info(f"Configuration saved to {config_file}")
        except Exception as e:
            self.logger.error(f"Failed to save configuration to {config_file}: {e}")
            raise
