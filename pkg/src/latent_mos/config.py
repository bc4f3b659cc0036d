"""Experiment configuration, per-dataset defaults and key = value config files."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .decoder import DEFAULT_LEVELS, DEFAULT_ROSTER, DEFAULT_WARMUP, ConfigError, parse_expert

# dataset -> (m, K0)
DATASET_DEFAULTS = {
    "spiral": (15, 2),
    "glycolytic": (15, 2),
    "lotka": (15, 4),
    "load": (15, 4),
    "solar": (15, 4),
    "power_event": (30, 6),
    "air_quality": (15, 4),
    "ecg": (15, 6),
}

ENV_PREFIX = "LATENT_MOS_"


@dataclass
class ExperimentConfig:
    dataset: str = "spiral"
    data_path: str = ""
    task: str = "interpolation"
    drop_rate: float = 0.9
    m: int = 0
    levels: tuple = DEFAULT_LEVELS
    roster: tuple = DEFAULT_ROSTER
    k0: int = 0
    warmup_epochs: int = DEFAULT_WARMUP
    epochs: int = 2000
    learning_rate: float = 1e-3
    loss: str = "mse"
    beta: float = 1.0
    seed: int = 0
    train_fraction: float = 0.8
    dt_policy: str = "auto"
    hidden: int = 0
    threads: int = 1
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        m_def, k_def = DATASET_DEFAULTS.get(self.dataset, (15, 4))
        if not self.m:
            self.m = m_def
        if not self.hidden:
            self.hidden = self.m
        self.levels = tuple(int(x) for x in self.levels)
        self.roster = tuple("*".join(parse_expert(r)) for r in self.roster)
        if not self.k0:
            self.k0 = min(k_def, len(self.roster))
        self.validate()

    @property
    def S(self) -> int:
        return len(self.levels)

    @property
    def K(self) -> int:
        return len(self.roster)

    def validate(self) -> None:
        if self.task not in ("interpolation", "extrapolation"):
            raise ConfigError(f"task must be interpolation or extrapolation, got {self.task!r}")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigError(f"drop_rate must lie in [0, 1), got {self.drop_rate}")
        if self.loss not in ("mse", "elbo"):
            raise ConfigError(f"loss must be mse or elbo, got {self.loss!r}")
        if not 1 <= self.k0 <= self.K:
            raise ConfigError(f"need 1 <= K0 <= K, got K0={self.k0}, K={self.K}")
        if self.m < self.S or any(L < 1 for L in self.levels) or not self.levels:
            raise ConfigError(f"invalid levels {self.levels} for m={self.m}")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs and warmup_epochs must be >= 0")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.dt_policy != "auto":
            try:
                if float(self.dt_policy) <= 0:
                    raise ValueError
            except ValueError:
                raise ConfigError(f"dt_policy must be 'auto' or a positive step count multiplier, got {self.dt_policy!r}") from None
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("extra")
        d["levels"] = list(self.levels)
        d["roster"] = list(self.roster)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(k, v) for k, v in d.items()})


_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, value):
    if not isinstance(value, str):
        return value
    typ = _TYPES[key]
    try:
        if typ == "int":
            return int(value)
        if typ == "float":
            return float(value)
        if typ == "tuple":
            parts = [p.strip() for p in value.replace(";", ",").split(",") if p.strip()]
            return tuple(int(p) for p in parts) if key == "levels" else tuple(parts)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value.strip()


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES or key == "extra":
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path=None, overrides: dict | None = None, environ=None) -> ExperimentConfig:
    """File values, then LATENT_MOS_<KEY> environment values, then explicit overrides."""
    d = {}
    if path is not None:
        d.update(parse_config_text(Path(path).read_text()))
    environ = os.environ if environ is None else environ
    for key in _TYPES:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None and key != "extra":
            d[key] = env
    d.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(d)


def dump_config_text(cfg: ExperimentConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
