"""Run configuration: pydantic models, key=value files, CLI overrides and presets."""

from __future__ import annotations

import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_LEARNING_RATE,
    DEFAULT_LOSS_WEIGHT,
    DEFAULT_MAX_EPOCHS,
    DEFAULT_PATIENCE,
    DEFAULT_VAL_FRACTION,
    GROUP_SIZE,
    HUBER_DELTA,
    MIN_IMPROVEMENT,
    SUPPORTED_SCALES,
)
from .errors import FormatError, SpecError
from .model import ModelConfig

OVERRIDE_PREFIX = "--set-"


class LossWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rec: float = Field(default=DEFAULT_LOSS_WEIGHT, ge=0.0)
    spatial: float = Field(default=DEFAULT_LOSS_WEIGHT, ge=0.0)
    low: float = Field(default=DEFAULT_LOSS_WEIGHT, ge=0.0)
    high: float = Field(default=DEFAULT_LOSS_WEIGHT, ge=0.0)


class DatasetSpec(BaseModel):
    """Patch protocol for one scene: cropping, patching, band padding, split selection."""

    model_config = ConfigDict(extra="forbid")

    name: str = "custom"
    patch_size: int = Field(default=144, ge=2)
    stride: int = Field(default=144, ge=1)
    scale: int = 2
    group_size: int = Field(default=GROUP_SIZE, ge=1)
    pad_target: int | None = None
    expected_bands: int | None = None
    crop_size: int | None = None
    test_origin: tuple[int, int] = (0, 0)
    val_fraction: float = Field(default=DEFAULT_VAL_FRACTION, gt=0.0, lt=1.0)
    seed: int = 0

    @field_validator("test_origin", mode="before")
    @classmethod
    def parse_origin(cls, value: Any) -> Any:
        if isinstance(value, str):
            parts = [part.strip() for part in value.split(",")]
            if len(parts) != 2:
                raise ValueError(f"test_origin must be 'row,col', got {value!r}")
            return (int(parts[0]), int(parts[1]))
        return value

    @model_validator(mode="after")
    def check_protocol(self) -> DatasetSpec:
        if self.scale not in SUPPORTED_SCALES:
            raise ValueError(f"scale must be one of {SUPPORTED_SCALES}, got {self.scale}")
        if self.patch_size % (2 * self.scale):
            raise ValueError(
                f"patch_size {self.patch_size} must be divisible by 2 * scale = {2 * self.scale}"
            )
        if self.pad_target is not None and self.pad_target % self.group_size:
            raise ValueError(
                f"pad_target {self.pad_target} does not split into groups of {self.group_size}"
            )
        if min(self.test_origin) < 0:
            raise ValueError(f"test_origin must be non-negative, got {self.test_origin}")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(default=DEFAULT_LEARNING_RATE, gt=0.0)
    batch_size: int = Field(default=DEFAULT_BATCH_SIZE, ge=1)
    max_epochs: int = Field(default=DEFAULT_MAX_EPOCHS, ge=1)
    patience: int = Field(default=DEFAULT_PATIENCE, ge=1)
    seed: int = 0
    delta: float = Field(default=HUBER_DELTA, gt=0.0)
    min_improvement: float = Field(default=MIN_IMPROVEMENT, ge=0.0)
    band_grouping: bool = True
    loss: LossWeights = Field(default_factory=LossWeights)
    model: ModelConfig = Field(default_factory=ModelConfig)

    @model_validator(mode="after")
    def check_schedule(self) -> TrainConfig:
        if self.patience >= self.max_epochs:
            raise ValueError(
                f"patience ({self.patience}) must be smaller than max_epochs ({self.max_epochs})"
            )
        return self


DATASET_PRESETS: dict[str, dict[str, Any]] = {
    "paviac": {"patch_size": 144, "stride": 144, "pad_target": 105, "expected_bands": 102},
    "paviau": {"patch_size": 144, "stride": 18, "pad_target": 105, "expected_bands": 103},
    "chikusei": {"crop_size": 512, "pad_target": 140, "expected_bands": 128},
}


def dataset_preset(name: str, scale: int, **overrides: Any) -> DatasetSpec:
    """Protocol defaults for the three benchmark scenes, adjusted for the scale."""
    key = name.strip().lower()
    if key not in DATASET_PRESETS:
        raise SpecError(f"unknown dataset preset {name!r}; choose from {sorted(DATASET_PRESETS)}")
    values: dict[str, Any] = {"name": key, "scale": scale, **DATASET_PRESETS[key]}
    if key == "chikusei":
        patch = 64 if scale == 2 else 128
        values.update(patch_size=patch, stride=patch)
    values.update(overrides)
    return DatasetSpec.model_validate(values)


def parse_key_values(text: str, *, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{number}: expected key=value, got {raw_line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatError(f"{source}:{number}: empty key")
        values[key] = value.strip()
    return values


def read_key_values(path: Path) -> dict[str, str]:
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_key_values(path.read_text(encoding="utf-8"), source=str(path))


def nest_keys(flat: Mapping[str, str]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        *parents, leaf = key.split(".")
        target = nested
        for part in parents:
            child = target.setdefault(part, {})
            if not isinstance(child, dict):
                raise FormatError(f"config key {key} conflicts with scalar key {part}")
            target = child
        target[leaf] = value
    return nested


def check_known_keys(model: type[BaseModel], nested: Mapping[str, Any], prefix: str = "") -> None:
    fields = model.model_fields
    for key, value in nested.items():
        dotted = f"{prefix}{key}"
        field = fields.get(key)
        if field is None:
            raise FormatError(f"unknown config key {dotted}")
        annotation = field.annotation
        if isinstance(value, dict):
            if not (isinstance(annotation, type) and issubclass(annotation, BaseModel)):
                raise FormatError(f"config key {dotted} does not take sub-keys")
            check_known_keys(annotation, value, prefix=f"{dotted}.")


def build_train_config(values: Mapping[str, str]) -> TrainConfig:
    nested = nest_keys(values)
    check_known_keys(TrainConfig, nested)
    return TrainConfig.model_validate(nested)


def build_dataset_spec(values: Mapping[str, str]) -> DatasetSpec:
    """A manifest may name a `preset`; remaining keys override its fields."""
    remaining = dict(values)
    preset = remaining.pop("preset", None)
    check_known_keys(DatasetSpec, remaining)
    if preset is None:
        return DatasetSpec.model_validate(remaining)
    scale = int(remaining.pop("scale", "2"))
    return dataset_preset(preset, scale, **remaining)


def flatten_model(model: BaseModel, prefix: str = "") -> list[tuple[str, str]]:
    lines: list[tuple[str, str]] = []
    for name in type(model).model_fields:
        value = getattr(model, name)
        key = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            lines.extend(flatten_model(value, prefix=f"{key}."))
        elif isinstance(value, tuple):
            lines.append((key, ",".join(str(part) for part in value)))
        elif isinstance(value, bool):
            lines.append((key, "true" if value else "false"))
        elif value is None:
            continue
        else:
            lines.append((key, repr(value) if isinstance(value, float) else str(value)))
    return lines


def render_key_values(model: BaseModel) -> str:
    """Serialize a config back to the key=value form read_key_values accepts."""
    return "".join(f"{key}={value}\n" for key, value in flatten_model(model))


def normalize_override_key(flag_name: str) -> str:
    raw = flag_name.removeprefix(OVERRIDE_PREFIX).strip()
    if not raw:
        raise SystemExit(f"Invalid override flag: missing name after {OVERRIDE_PREFIX}")
    return raw.replace("-", "_").lower()


def extract_override_flags(argv: list[str]) -> tuple[list[str], dict[str, str]]:
    """Split `--set-<key> <value>` / `--set-<key>=<value>` out of argv; later flags win."""
    passthrough: list[str] = []
    overrides: dict[str, str] = {}
    index = 0
    while index < len(argv):
        token = argv[index]
        if not token.startswith(OVERRIDE_PREFIX):
            passthrough.append(token)
            index += 1
            continue
        if "=" in token:
            flag_name, value = token.split("=", 1)
            overrides[normalize_override_key(flag_name)] = value
            index += 1
            continue
        if index + 1 >= len(argv):
            raise SystemExit(f"Missing value for {token}")
        next_token = argv[index + 1]
        if next_token.startswith("--"):
            raise SystemExit(
                f"Missing value for {token} (use {token}=<value> for values starting with '--')"
            )
        overrides[normalize_override_key(token)] = next_token
        index += 2
    return passthrough, overrides


def env_int(name: str) -> int | None:
    raw = (os.environ.get(name) or "").strip()
    if not raw:
        return None
    try:
        return int(raw)
    except ValueError as error:
        raise SpecError(f"{name} must be an integer, got {raw!r}") from error


def seed_from_env() -> int | None:
    return env_int("DDSR_SEED")


def workers_from_env(default: int = 4) -> int:
    value = env_int("DDSR_WORKERS")
    return max(1, value) if value is not None else default
