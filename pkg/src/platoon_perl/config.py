"""Harness configuration: a JSON file with one section per component."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .disturbance import KINDS as ERROR_KINDS, DisturbanceModel
from .mpc import MpcConfig, MpcError
from .residual_nn import NnResidualConfig
from .residual_q import QResidualConfig
from .scenario import CONTROLLERS, ScenarioError, ScenarioSpec


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None, key: str | None = None):
        self.line = line
        self.path = path
        self.message = message
        self.key = key
        where = f"{path}:{line}: " if (path and line) else (f"{path}: " if path else "")
        super().__init__(where + message)


SECTIONS = {
    "scenario": ScenarioSpec,
    "mpc": MpcConfig,
    "q_learning": QResidualConfig,
    "nn": NnResidualConfig,
}


@dataclass
class HarnessConfig:
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    error_kind: str = "none"
    noise_sigma: float = 0.3
    controllers: list = field(default_factory=lambda: ["mpc_q"])
    mpc: MpcConfig = field(default_factory=MpcConfig)
    q_learning: QResidualConfig = field(default_factory=QResidualConfig)
    nn: NnResidualConfig = field(default_factory=NnResidualConfig)
    seeds: list = field(default_factory=lambda: [0])
    # None: $PLATOON_PERL_OUT, else "runs"
    out_dir: str | None = None
    matrix: str | None = None

    def validate(self) -> "HarnessConfig":
        if self.error_kind not in ERROR_KINDS:
            raise ConfigError(f"error_kind must be one of {ERROR_KINDS}, got {self.error_kind!r}",
                              key="error_kind")
        if not self.noise_sigma >= 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}", key="noise_sigma")
        if not self.controllers or any(c not in CONTROLLERS for c in self.controllers):
            raise ConfigError(f"controllers must be a nonempty subset of {CONTROLLERS}, "
                              f"got {self.controllers}", key="controllers")
        if not self.seeds or any(int(s) != s or s < 0 for s in self.seeds):
            raise ConfigError(f"seeds must be a nonempty list of nonnegative integers, got {self.seeds}",
                              key="seeds")
        if self.matrix not in (None, "paper"):
            raise ConfigError(f"matrix must be 'paper' or null, got {self.matrix!r}", key="matrix")
        spacing = self.scenario.initial_spacing
        if not self.mpc.d_min <= spacing <= self.mpc.d_max:
            raise ConfigError(f"initial_spacing {spacing} is outside [d_min, d_max] = "
                              f"[{self.mpc.d_min}, {self.mpc.d_max}]", key="initial_spacing")
        return self

    def disturbance(self, seed: int | None = None) -> DisturbanceModel:
        return DisturbanceModel(self.error_kind, self.noise_sigma, seed)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scenario"]["phases"] = [list(p) for p in self.scenario.phases]
        d["nn"]["sizes"] = list(self.nn.sizes)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        """Hash of the experiment settings; the output location is not part of it."""
        d = self.to_dict()
        d.pop("out_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def _build_section(cls, values: dict, name: str, text: str, path):
    known = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown key {name}.{key}", _line_of(text, key), path)
    try:
        return cls(**values)
    except (TypeError, ValueError, MpcError, ScenarioError) as exc:
        line = None
        for key in values:
            if key in str(exc):
                line = _line_of(text, key)
                break
        raise ConfigError(f"invalid [{name}] section: {exc}",
                          line or _line_of(text, name), path) from exc


def from_dict(data: dict, text: str = "", path=None) -> HarnessConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", 1, path)
    kwargs = {}
    top = {f.name for f in dataclasses.fields(HarnessConfig)}
    for key, value in data.items():
        if key not in top:
            raise ConfigError(f"unknown key {key!r}", _line_of(text, key), path)
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be an object", _line_of(text, key), path)
            kwargs[key] = _build_section(SECTIONS[key], value, key, text, path)
        else:
            kwargs[key] = value
    cfg = HarnessConfig(**kwargs)
    try:
        return cfg.validate()
    except ConfigError as exc:
        line = _line_of(text, exc.key) if exc.key else None
        raise ConfigError(exc.message, line, path, exc.key) from None


def load_config(path) -> HarnessConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, path) from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"JSON syntax error: {exc.msg} (column {exc.colno})", exc.lineno, path) from exc
    return from_dict(data, text, path)
