"""Experiment configuration: INI-style ``key = value`` files with strict keys."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .evaluation import Protocol
from .models import FAMILIES
from .systems import KINDS, SystemSpec, default_spec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class SystemConfig:
    kind: str = "linear"
    n: int = 5
    kbt: float = 1.0
    dt: float = 1e-3
    n_traj: int = 100
    points_per_traj: int = 100


@dataclass
class ModelConfig:
    family: str = "brognet"


@dataclass
class EvalConfig:
    n_init: int = 100
    seeds_per_init: int = 10
    steps: int = 100


@dataclass
class PathConfig:
    out_dir: str = "runs"
    dataset: str = ""
    checkpoint: str = ""


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathConfig = field(default_factory=PathConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def spec(self) -> SystemSpec:
        return default_spec(self.system.kind, self.system.n, kbt=self.system.kbt, dt=self.system.dt)

    def protocol(self) -> Protocol:
        return Protocol(self.eval.n_init, self.eval.seeds_per_init, self.eval.steps)

    def validate(self) -> None:
        if self.system.kind not in KINDS:
            raise ConfigError(f"system.kind must be one of {KINDS}")
        if self.model.family not in FAMILIES:
            raise ConfigError(f"model.family must be one of {FAMILIES}")
        if self.system.n_traj < 1 or self.system.points_per_traj < 1:
            raise ConfigError("n_traj and points_per_traj must be >= 1")
        if self.run.threads < 1:
            raise ConfigError("threads must be >= 1")
        try:
            self.spec()
            self.protocol()
            TrainConfig(**asdict(self.train))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_ini(self) -> str:
        lines = []
        for section in fields(self):
            lines.append(f"[{section.name}]")
            for f in fields(getattr(self, section.name)):
                lines.append(f"{f.name} = {getattr(getattr(self, section.name), f.name)}")
            lines.append("")
        return "\n".join(lines)


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def set_value(cfg: ExperimentConfig, section: str, key: str, raw) -> None:
    if section not in {f.name for f in fields(cfg)}:
        raise ConfigError(f"unknown section [{section}]")
    target = getattr(cfg, section)
    names = {f.name for f in fields(target)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in [{section}]")
    default = getattr(target, key)
    try:
        value = _coerce(str(raw), default) if isinstance(raw, str) else raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
    setattr(target, key, value)


def load_config(path: str | Path | None = None, overrides: dict[tuple[str, str], object] | None = None) -> ExperimentConfig:
    """Defaults, then file values, then overrides (highest precedence)."""
    cfg = ExperimentConfig()
    if path:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if parser.defaults():
            raise ConfigError("keys outside a [section] are not allowed")
        for section in parser.sections():
            for key, raw in parser.items(section):
                set_value(cfg, section, key, raw)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            set_value(cfg, section, key, value)
    cfg.validate()
    return cfg
