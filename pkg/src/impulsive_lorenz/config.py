"""Experiment configuration as a single strict JSON document.

Every field has a default.  Unknown keys anywhere in the document are
rejected with :class:`~impulsive_lorenz.errors.ConfigError`.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any

from .conditions import CheckSettings
from .errors import ConfigError
from .flow_core import IntegratorConfig, LorenzParams
from .geometric import GeoParams
from .impulse import ImpulseSpec

SCHEMA = "experiment-config/1"
BACKENDS = ("geometric", "ode")


@dataclass(frozen=True)
class MeasureSettings:
    seeds: int = 200
    burn_in: int = 1000
    orbit_length: int = 100_000
    degree: int = 4
    thin: int = 10
    basin_tol: float = 0.05
    flow_samples: int = 2000

    def __post_init__(self):
        if self.seeds < 1 or self.burn_in < 0 or self.orbit_length < 1 or self.degree < 1:
            raise ConfigError("measure settings must be positive")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")


@dataclass(frozen=True)
class EntropySettings:
    align_steps: int = 50
    cone_half_angle: float = 45.0

    def __post_init__(self):
        if self.align_steps < 0:
            raise ConfigError("align_steps must be non-negative")


@dataclass(frozen=True)
class SimulateSettings:
    x0: tuple = (0.3, 0.2)
    T: float = 20.0
    dt: float = 0.01
    section_steps: int = 1000

    def __post_init__(self):
        if len(self.x0) != 2:
            raise ConfigError("x0 must be a section point (u, v)")
        if self.T <= 0 or self.dt <= 0:
            raise ConfigError("T and dt must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    backend: str = "geometric"
    lorenz: LorenzParams = LorenzParams()
    geo: GeoParams = GeoParams()
    impulse: ImpulseSpec = ImpulseSpec()
    epsilons: tuple = (0.1, 0.05, 0.02, 0.01, 0.005, 0.0)
    integrator: IntegratorConfig = IntegratorConfig()
    measure: MeasureSettings = MeasureSettings()
    entropy: EntropySettings = EntropySettings()
    simulate: SimulateSettings = SimulateSettings()
    conditions: CheckSettings = CheckSettings()
    seed: int = 0
    out: str = "out"
    schema: str = SCHEMA

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.schema != SCHEMA:
            raise ConfigError(f"unsupported config schema {self.schema!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(d)


def _to_plain(obj) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    defaults = cls()
    kw = {}
    for name, value in d.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kw[name] = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{where}.{name} must be a list")
            kw[name] = tuple(value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return ExperimentConfig.from_json(text)
