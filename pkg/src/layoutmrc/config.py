"""Flat ``key=value`` run configuration with command-line overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from os import PathLike
from pathlib import Path
from typing import Iterable, Mapping

from .model import ModelConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


# keys that are neither model nor training hyper-parameters
RUN_DEFAULTS: dict[str, object] = {
    "train": "",
    "dev": "",
    "test": "",
    "output_dir": "run",
    "checkpoint": "",
    "vocab": "",
    "predictions": "",
    "vocab_size": 8000,
    "decode": "greedy",
    "beam_size": 4,
    "length_alpha": 1.0,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def load_config_file(path: str | PathLike) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text(encoding="utf-8"), str(p))


def parse_overrides(items: Iterable[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(key: str, raw: str, default: object) -> object:
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return raw


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: dict = field(default_factory=lambda: dict(RUN_DEFAULTS))

    @property
    def seed(self) -> int:
        return self.train.seed

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "RunConfig":
        model_defaults = ModelConfig()
        train_defaults = TrainConfig()
        model_kw, train_kw, run = {}, {}, dict(RUN_DEFAULTS)
        model_names = {f.name for f in fields(ModelConfig)}
        train_names = {f.name for f in fields(TrainConfig)}
        for key, raw in values.items():
            if key in model_names:
                model_kw[key] = _coerce(key, raw, getattr(model_defaults, key))
            elif key in train_names:
                train_kw[key] = _coerce(key, raw, getattr(train_defaults, key))
            elif key in RUN_DEFAULTS:
                run[key] = _coerce(key, raw, RUN_DEFAULTS[key])
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(ModelConfig(**model_kw), TrainConfig(**train_kw), run)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_text(self) -> str:
        lines = ["# model"]
        lines += [f"{f.name} = {getattr(self.model, f.name)}" for f in fields(ModelConfig)]
        lines.append("# training")
        lines += [f"{f.name} = {getattr(self.train, f.name)}" for f in fields(TrainConfig)]
        lines.append("# run")
        lines += [f"{k} = {v}" for k, v in self.run.items()]
        return "\n".join(lines) + "\n"


def resolve(config_path: str | None, overrides: Mapping[str, str]) -> RunConfig:
    """File values first, then overrides (overrides win)."""
    values = load_config_file(config_path) if config_path else {}
    values.update(overrides)
    return RunConfig.from_mapping(values)
