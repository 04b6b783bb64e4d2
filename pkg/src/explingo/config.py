"""Application configuration: defaults, a YAML/JSON file, environment
variables and command-line flags, merged in that order of increasing
precedence."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Any, Literal, Mapping, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, ValidationError

from .backends import API_BASE_ENV, API_KEY_ENV, BackendConfig
from .grading import GradeWeights

CONFIG_ENV = "EXPLINGO_CONFIG"


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PoolsConfig(_Section):
    h: int = Field(0, ge=0)
    b: int = Field(0, ge=0)
    fluency_k: int = Field(5, ge=1)
    seed: int = 0


class NarratorSettings(_Section):
    base_prompt: str = "BP1"
    temperature: float = Field(0.0, ge=0)
    max_tokens: int = Field(512, ge=1)
    num_features: Optional[int] = Field(None, ge=1)


class BootstrapSettings(_Section):
    max_attempts: Optional[int] = Field(None, ge=1)
    shuffle_seed: Optional[int] = None


class GuardrailConfig(_Section):
    min_total: float = 12.0
    min_accuracy: float = Field(4.0, ge=0, le=4)


class PathsConfig(_Section):
    datasets: Optional[str] = None
    validation: Optional[str] = None
    reports: str = "reports"
    cache: Optional[str] = ".explingo-cache"
    templates: Optional[str] = None


class AppConfig(_Section):
    backend: BackendConfig = Field(default_factory=BackendConfig)
    weights: GradeWeights = Field(default_factory=GradeWeights)
    conciseness: Union[PositiveFloat, Literal["auto"]] = "auto"
    repeats: int = Field(5, ge=1)
    pools: PoolsConfig = Field(default_factory=PoolsConfig)
    narrator: NarratorSettings = Field(default_factory=NarratorSettings)
    bootstrap: BootstrapSettings = Field(default_factory=BootstrapSettings)
    guardrail: GuardrailConfig = Field(default_factory=GuardrailConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)


def _merge(base: dict, update: Mapping) -> dict:
    out = dict(base)
    for key, value in update.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _format_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{path}: {err['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> AppConfig:
    """Build an :class:`AppConfig`.

    ``overrides`` is a nested mapping (usually from CLI flags); ``None`` values
    are ignored so unset flags fall through to lower layers.
    """
    env = os.environ if env is None else env
    data: dict = {}
    path = path or env.get(CONFIG_ENV)
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded
    env_layer: dict = {}
    if env.get(API_KEY_ENV):
        env_layer.setdefault("backend", {})["api_key"] = env[API_KEY_ENV]
    if env.get(API_BASE_ENV):
        env_layer.setdefault("backend", {})["api_base"] = env[API_BASE_ENV]
    data = _merge(data, env_layer)
    data = _merge(data, _drop_none(overrides or {}))
    try:
        return AppConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from exc


def _drop_none(mapping: Mapping) -> dict:
    out = {}
    for key, value in mapping.items():
        if isinstance(value, Mapping):
            nested = _drop_none(value)
            if nested:
                out[key] = nested
        elif value is not None:
            out[key] = value
    return out
