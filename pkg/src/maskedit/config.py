"""JSON run configuration with CLI override layering (flag > JSON > default)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .pipeline import DEFAULT_GS, ConfigError, EditMode, Task


@dataclass(frozen=True)
class RunConfig:
    input_dir: str | None = None
    mask_dir: str | None = None
    output_dir: str | None = None
    metrics_csv: str | None = None
    weights: str | None = None
    prompt: str = ""
    guidance_scale: float = DEFAULT_GS
    seed: int = 0
    num_steps: int = 50
    batch_size: int = 5
    mode: str = EditMode.EATTN.value
    composite_unmasked: bool = False
    task: str = Task.REPLACEMENT.value
    workers: int = 1

    def as_dict(self) -> dict:
        return asdict(self)


FIELD_NAMES = tuple(f.name for f in fields(RunConfig))
_TYPES = {
    "guidance_scale": (int, float),
    "seed": (int,),
    "num_steps": (int,),
    "batch_size": (int,),
    "workers": (int,),
    "composite_unmasked": (bool,),
    "prompt": (str,),
    "mode": (str,),
    "task": (str,),
}


def _check_types(values: Mapping[str, Any]) -> None:
    for key, value in values.items():
        if value is None:
            continue
        expected = _TYPES.get(key, (str,))
        if isinstance(value, bool) and bool not in expected:
            raise ConfigError(f"config field {key!r} must be {expected[0].__name__}, got bool")
        if not isinstance(value, expected):
            raise ConfigError(f"config field {key!r} must be {expected[0].__name__}, got {type(value).__name__}")


def resolve(json_values: Mapping[str, Any] | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Merge defaults, JSON fields and CLI overrides (``None`` overrides are ignored)."""
    merged: dict[str, Any] = {}
    for layer in (json_values or {}, overrides or {}):
        unknown = sorted(set(layer) - set(FIELD_NAMES))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        _check_types(layer)
        merged.update({k: v for k, v in layer.items() if v is not None})
    cfg = RunConfig(**merged)
    valid_modes = [m.value for m in EditMode]
    if cfg.mode not in valid_modes:
        raise ConfigError(f"invalid mode {cfg.mode!r}; valid modes: {', '.join(valid_modes)}")
    valid_tasks = [t.value for t in Task]
    if cfg.task not in valid_tasks:
        raise ConfigError(f"invalid task {cfg.task!r}; valid tasks: {', '.join(valid_tasks)}")
    return cfg


def load_json(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def validate_paths(cfg: RunConfig, need_output: bool = True) -> None:
    for key in ("input_dir", "mask_dir"):
        value = getattr(cfg, key)
        if not value:
            raise ConfigError(f"{key} is required")
        if not Path(value).is_dir():
            raise ConfigError(f"{key} {value!r} is not a directory")
    if need_output:
        if not cfg.output_dir:
            raise ConfigError("output_dir is required")
        out = Path(cfg.output_dir)
        if out.exists() and not out.is_dir():
            raise ConfigError(f"output_dir {cfg.output_dir!r} exists and is not a directory")
    if cfg.weights and not Path(cfg.weights).is_file():
        raise ConfigError(f"weights file {cfg.weights!r} not found")
    if cfg.metrics_csv and Path(cfg.metrics_csv).is_dir():
        raise ConfigError(f"metrics_csv {cfg.metrics_csv!r} is a directory")
