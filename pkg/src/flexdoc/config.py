"""Run configuration: a typed key tree read from TOML or JSON.

Sections mirror the library dataclasses::

    seed = 0
    out = "runs/exp"
    tasks = ["ELEM", "POS", "ATTR", "IMG", "TXT"]
    workers = 1

    [data]       # dir, schema, train, val, test
    [generator]  # GeneratorConfig fields
    [model]      # ModelConfig fields
    [train]      # TrainConfig fields

Unknown keys and values of the wrong type are errors that name the key path.
"""

from __future__ import annotations

import json
import os
from dataclasses import MISSING, dataclass, field, fields
from typing import Any

import tomli

from .model import ModelConfig
from .synth import GeneratorConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, keys: list[str] | None = None):
        super().__init__(message)
        self.keys = keys or []


_DATA_KEYS = {"dir": str, "schema": str, "train": str, "val": str, "test": str}
_TOP_KEYS = {"seed": int, "out": str, "tasks": list, "workers": int}
_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "generator": GeneratorConfig}


def _expected_types(cls) -> dict[str, tuple]:
    out = {}
    for f in fields(cls):
        default = f.default if f.default is not MISSING else None
        if f.default_factory is not MISSING:  # type: ignore[misc]
            default = f.default_factory()  # type: ignore[misc]
        if isinstance(default, bool):
            out[f.name] = (bool,)
        elif isinstance(default, int):
            out[f.name] = (int,)
        elif isinstance(default, float):
            out[f.name] = (int, float)
        elif isinstance(default, str):
            out[f.name] = (str,)
        elif isinstance(default, tuple):
            out[f.name] = (list, tuple)
        else:
            out[f.name] = (str, int, float, type(None))
    return out


def _check(section: dict, allowed: dict, prefix: str, errors: list[str]) -> None:
    for key, value in section.items():
        path = f"{prefix}{key}"
        if key not in allowed:
            errors.append(f"{path}: unknown key")
            continue
        types = allowed[key]
        types = types if isinstance(types, tuple) else (types,)
        if isinstance(value, bool) and bool not in types:
            errors.append(f"{path}: expected {'/'.join(t.__name__ for t in types)}, got bool")
        elif not isinstance(value, types):
            errors.append(f"{path}: expected {'/'.join(t.__name__ for t in types)}, got {type(value).__name__}")


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "runs/default"
    tasks: list[str] = field(default_factory=lambda: ["ELEM", "POS", "ATTR", "IMG", "TXT"])
    workers: int = 1
    data: dict[str, str] = field(default_factory=dict)
    model: dict[str, Any] = field(default_factory=dict)
    train: dict[str, Any] = field(default_factory=dict)
    generator: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        errors: list[str] = []
        top = {k: v for k, v in raw.items() if k not in ("data", *_SECTIONS)}
        _check(top, _TOP_KEYS, "", errors)
        for name in ("data", *_SECTIONS):
            if name in raw and not isinstance(raw[name], dict):
                errors.append(f"{name}: expected a table")
        _check(raw.get("data", {}) if isinstance(raw.get("data"), dict) else {}, _DATA_KEYS, "data.", errors)
        for name, cls_ in _SECTIONS.items():
            sec = raw.get(name, {})
            if isinstance(sec, dict):
                _check(sec, _expected_types(cls_), f"{name}.", errors)
        if errors:
            raise ConfigError("invalid configuration: " + "; ".join(errors), [e.split(":")[0] for e in errors])
        return cls(
            seed=raw.get("seed", 0),
            out=raw.get("out", "runs/default"),
            tasks=list(raw.get("tasks", cls().tasks)),
            workers=raw.get("workers", 1),
            data=dict(raw.get("data", {})),
            model=dict(raw.get("model", {})),
            train=dict(raw.get("train", {})),
            generator=dict(raw.get("generator", {})),
        )

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
            if path.endswith(".json"):
                raw = json.loads(blob)
            else:
                raw = tomli.loads(blob.decode())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(raw)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "tasks": list(self.tasks),
            "workers": self.workers,
            "data": dict(self.data),
            "model": dict(self.model),
            "train": dict(self.train),
            "generator": dict(self.generator),
        }

    # ----------------------------------------------------------- resolution
    def model_config(self) -> ModelConfig:
        return _build(ModelConfig, self.model, "model", seed=self.seed)

    def train_config(self, **overrides) -> TrainConfig:
        return _build(TrainConfig, {**self.train, **overrides}, "train", seed=self.seed)

    def generator_config(self) -> GeneratorConfig:
        return _build(GeneratorConfig, self.generator, "generator", seed=self.seed)

    def data_path(self, key: str) -> str:
        if key in self.data:
            return self.data[key]
        if "dir" in self.data:
            name = "schema.json" if key == "schema" else f"{key}.jsonl"
            return os.path.join(self.data["dir"], name)
        raise ConfigError(f"data.{key} is not configured (set data.dir or data.{key})", [f"data.{key}"])


def _build(cls, values: dict, section: str, seed: int):
    values = dict(values)
    values.setdefault("seed", seed)
    try:
        return cls.from_dict(values)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{section}: {exc}", [section]) from exc
