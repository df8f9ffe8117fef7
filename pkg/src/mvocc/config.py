"""Experiment configuration: JSON files, environment overrides and sweep grids."""

import copy
import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .evaluation import LateFusion
from .methods import MethodConfig, MethodId
from .synth import SynthSpec

logger = logging.getLogger(__name__)

# ============================================================================
# Environment
# ============================================================================

ENV_JOBS = "MVOCC_JOBS"
ENV_OUTPUT_DIR = "MVOCC_OUTPUT_DIR"
ENV_LOG_LEVEL = "MVOCC_LOG_LEVEL"

DEFAULT_OUTPUT_DIR = "results"

# Fields that never change results and are left out of the config hash
UNHASHED_FIELDS = ("output_dir", "jobs")

# ============================================================================
# Sweeps
# ============================================================================

# parameter -> (applicable methods, path inside MethodConfig)
SWEEP_PARAMETERS: Dict[str, Tuple[Tuple[str, ...], Tuple[str, str]]] = {
    "R": (("TF",), ("fusion", "rank")),
    "m": (("SIM",), ("alignment", "margin")),
    "alpha": (("DIS", "SIM", "DCCA"), ("alignment", "alpha")),
}

SWEEP_GRIDS: Dict[str, List[float]] = {
    "R": [4, 8, 16, 32, 64],
    "m": [0, 1, 3, 5, 7],
    "alpha": [0.01, 0.1, 0.5, 0.9, 0.99],
}


class DatasetSource(BaseModel):
    """A dataset directory or a synthetic generator spec."""

    name: Optional[str] = None
    path: Optional[str] = None
    synth: Optional[SynthSpec] = None
    classes: Optional[List[int]] = Field(default=None, description="positive class override")

    @model_validator(mode="after")
    def _one_source(self) -> "DatasetSource":
        if (self.path is None) == (self.synth is None):
            raise ValueError("A dataset needs exactly one of 'path' or 'synth'")
        return self

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.synth is not None:
            return self.synth.name
        return Path(self.path).name


class ExperimentConfig(BaseModel):
    """
    One experiment: datasets x methods x positive classes x repeats.

    ``overrides`` are merged into every method's MethodConfig, ``per_method`` entries only
    into the named method's (after ``overrides``).
    """

    datasets: List[DatasetSource] = Field(min_length=1)
    methods: List[MethodId] = Field(min_length=1)
    overrides: Dict[str, Any] = Field(default_factory=dict)
    per_method: Dict[MethodId, Dict[str, Any]] = Field(default_factory=dict)
    protocol: Literal["direct", "one_vs_all"] = "one_vs_all"
    positive_classes: Optional[List[int]] = None
    benchmark_mode: bool = False
    repeats: int = Field(default=10, ge=1)
    train_ratio: float = Field(default=0.7, gt=0.0, lt=1.0)
    late_fusion: List[LateFusion] = Field(default_factory=lambda: ["AVG"], min_length=1)
    seed: int = 0
    output_dir: str = DEFAULT_OUTPUT_DIR
    jobs: int = Field(default=1, ge=1)

    @field_validator("methods")
    @classmethod
    def _unique_methods(cls, methods: List[str]) -> List[str]:
        if len(set(methods)) != len(methods):
            raise ValueError(f"Duplicate method ids in {methods}")
        return methods

    @model_validator(mode="after")
    def _method_configs_valid(self) -> "ExperimentConfig":
        for method in self.methods:
            MethodConfig.model_validate(self._method_payload(method))
        return self

    def _method_payload(self, method: str) -> Dict[str, Any]:
        payload = deep_merge(copy.deepcopy(self.overrides), self.per_method.get(method, {}))
        payload["method"] = method
        payload.setdefault("seed", self.seed)
        return payload

    def method_config(self, method: str, seed: Optional[int] = None) -> MethodConfig:
        payload = self._method_payload(method)
        if seed is not None:
            payload["seed"] = seed
        try:
            return MethodConfig.model_validate(payload)
        except ValidationError as e:
            raise _config_error(e) from e


def deep_merge(base: Dict[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursively merge ``update`` into ``base`` (mutates and returns ``base``)."""
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            deep_merge(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def _config_error(error: ValidationError) -> ConfigError:
    fields = [".".join(str(part) for part in item["loc"]) for item in error.errors()]
    details = "; ".join(f"{'.'.join(str(p) for p in item['loc'])}: {item['msg']}" for item in error.errors())
    return ConfigError(f"Invalid configuration: {details}", fields=fields)


def environment_overrides(env: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """Config values taken from MVOCC_JOBS and MVOCC_OUTPUT_DIR."""
    env = os.environ if env is None else env
    overrides: Dict[str, Any] = {}
    if env.get(ENV_JOBS):
        try:
            overrides["jobs"] = int(env[ENV_JOBS])
        except ValueError as e:
            raise ConfigError(f"{ENV_JOBS} must be an integer, got '{env[ENV_JOBS]}'", [ENV_JOBS]) from e
    if env.get(ENV_OUTPUT_DIR):
        overrides["output_dir"] = env[ENV_OUTPUT_DIR]
    return overrides


def parse_config(
    data: Mapping[str, Any],
    flags: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """
    Build an ExperimentConfig from a dict; precedence file < environment < flags.

    Raises:
        ConfigError: If validation fails (carries the offending field names)
    """
    merged = dict(data)
    merged.update(environment_overrides(env))
    merged.update({k: v for k, v in (flags or {}).items() if v is not None})
    try:
        return ExperimentConfig.model_validate(merged)
    except ValidationError as e:
        raise _config_error(e) from e


def load_config(
    path: Union[str, Path],
    flags: Optional[Mapping[str, Any]] = None,
    env: Optional[Mapping[str, str]] = None,
) -> ExperimentConfig:
    """
    Load a JSON experiment config file.

    Raises:
        ConfigError: If the file is missing, not JSON or invalid
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    config = parse_config(data, flags, env)
    logger.info(f"Loaded config {path} (hash {config_hash(config)[:12]})")
    return config


def load_synth_spec(path: Union[str, Path]) -> SynthSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Synthetic spec not found: {path}")
    try:
        return SynthSpec.model_validate_json(path.read_text())
    except ValidationError as e:
        raise _config_error(e) from e


def config_hash(config: BaseModel) -> str:
    """SHA-256 of the sorted-key JSON dump, without output location and worker count."""
    payload = config.model_dump(mode="json", exclude=set(UNHASHED_FIELDS) & set(type(config).model_fields))
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_grid(text: str) -> List[float]:
    """Parse a comma-separated grid such as ``4,8,16``."""
    try:
        return [float(item) for item in text.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigError(f"Grid must be comma-separated numbers, got '{text}'", ["grid"]) from e


def sweep_configs(
    config: ExperimentConfig,
    parameter: str,
    grid: List[float],
) -> List[Tuple[float, ExperimentConfig]]:
    """
    One ExperimentConfig per grid value with the parameter set for every method.

    Raises:
        ConfigError: If the parameter is unknown or does not apply to a configured method
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"Unknown sweep parameter '{parameter}', expected one of {sorted(SWEEP_PARAMETERS)}", ["param"]
        )
    applicable, (section, key) = SWEEP_PARAMETERS[parameter]
    inapplicable = [m for m in config.methods if m not in applicable]
    if inapplicable:
        raise ConfigError(
            f"Parameter '{parameter}' does not apply to {inapplicable} (applies to {list(applicable)})",
            ["param", "methods"],
        )
    if not grid:
        logger.warning(f"Empty grid for sweep over '{parameter}'")

    configs = []
    for value in grid:
        typed = int(value) if parameter == "R" else float(value)
        data = config.model_dump(mode="json")
        for method in config.methods:
            entry = data["per_method"].setdefault(method, {})
            entry.setdefault(section, {})[key] = typed
        try:
            configs.append((typed, ExperimentConfig.model_validate(data)))
        except ValidationError as e:
            raise _config_error(e) from e
    return configs
