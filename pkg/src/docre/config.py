"""Experiment configuration: a TOML file with one table per component.

Precedence, lowest first: dataclass defaults, the config file, command-line
flags. Unknown tables or keys are errors so that typos never pass silently.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from .encoder import EncoderConfig
from .head import HeadConfig
from .synthetic import SyntheticConfig, SyntheticConfigError
from .trainer import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    train: str = ""
    dev: str = ""
    test: str = ""
    schema: str = ""


@dataclass
class CalibrationConfig:
    method: str = "none"  # none | ts | cda-ts
    bins: int = 10
    population: str = "all"  # all | predicted

    def validate(self) -> None:
        if self.method not in ("none", "ts", "cda-ts"):
            raise ValueError(f"calibration method must be none, ts or cda-ts, got {self.method!r}")
        if self.bins < 1:
            raise ValueError(f"bins must be >= 1, got {self.bins}")
        if self.population not in ("all", "predicted"):
            raise ValueError(f"population must be 'all' or 'predicted', got {self.population!r}")


@dataclass
class RunConfig:
    seeds: list[int] = field(default_factory=lambda: [0])
    out: str = "out"
    jobs: int = 1
    subsample: int = 0  # 0 keeps the whole training split
    subsample_tolerance: float = 0.05

    def validate(self) -> None:
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        if self.subsample < 0:
            raise ValueError(f"subsample must be >= 0, got {self.subsample}")


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def validate(self) -> None:
        for f in fields(self):
            section = getattr(self, f.name)
            check = getattr(section, "validate", None)
            if check is None:
                continue
            try:
                check()
            except (ValueError, SyntheticConfigError) as exc:
                raise ConfigError(f"[{f.name}] {exc}") from None

    def set(self, section: str, key: str, value) -> None:
        target = getattr(self, section, None)
        if target is None or not is_dataclass(target):
            raise ConfigError(f"unknown config section [{section}]")
        kinds = {f.name: f for f in fields(target)}
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        setattr(target, key, _coerce(getattr(target, key), value, f"{section}.{key}"))

    def to_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    def dumps(self) -> str:
        """TOML text of the effective configuration (loadable by :func:`load_config`)."""
        lines = []
        for name, table in self.to_dict().items():
            lines.append(f"[{name}]")
            for k, v in table.items():
                lines.append(f"{k} = {_toml_value(v)}")
            lines.append("")
        return "\n".join(lines)


def _plain(section) -> dict:
    out = {}
    for f in fields(section):
        v = getattr(section, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot write {type(v).__name__} to TOML")


def _coerce(current, value, where: str):
    """Convert ``value`` to the type of the field's current value."""
    try:
        if isinstance(current, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("on", "true", "yes", "1"):
                return True
            if isinstance(value, str) and value.lower() in ("off", "false", "no", "0"):
                return False
            raise ValueError(value)
        if isinstance(current, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            return float(value)
        if isinstance(current, str):
            if not isinstance(value, str):
                raise ValueError(value)
            return value
        if isinstance(current, (list, tuple)):
            if isinstance(value, str):
                value = [x for x in value.split(",") if x.strip()]
            kind = type(current[0]) if current else int
            seq = [kind(x) for x in value]
            return tuple(seq) if isinstance(current, tuple) else seq
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: invalid value {value!r}") from None
    return value


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then ``path`` (TOML), then ``overrides`` {(section, key): value}."""
    cfg = ExperimentConfig()
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            tree = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section, table in tree.items():
            if not isinstance(table, dict):
                raise ConfigError(f"{path}: top-level key {section!r} must be a table")
            for key, value in table.items():
                cfg.set(section, key, value)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            cfg.set(section, key, value)
    cfg.validate()
    return cfg
