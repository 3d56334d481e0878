"""
Configuration for the segmentation pipeline.

Defaults live in the dataclasses below; `config.yml` (if present) overrides
them section by section, and the CLI overrides both.
"""
import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, Optional

import yaml

from errors import UsageError

CONFIG_PATH = 'config.yml'


@dataclass(frozen=True)
class LbpOptions:
    tolerance: float = 1e-8
    max_iters: int = 1000
    damping: float = 0.5

    def __post_init__(self):
        if not self.tolerance > 0:
            raise UsageError(f"lbp tolerance must be positive, got {self.tolerance}")
        if self.max_iters < 1:
            raise UsageError(f"lbp max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 <= self.damping < 1.0:
            raise UsageError(f"lbp damping must lie in [0, 1), got {self.damping}")


@dataclass(frozen=True)
class EstimateOptions:
    max_iters: int = 100
    alpha_init: float = 1.0
    alpha_max: float = 10.0
    alpha_tol: float = 1e-4
    mean_tol: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise UsageError(f"estimate max_iters must be >= 1, got {self.max_iters}")
        if not self.alpha_max > 0:
            raise UsageError(f"alpha_max must be positive, got {self.alpha_max}")
        if not 0.0 <= self.alpha_init <= self.alpha_max:
            raise UsageError(f"alpha_init must lie in [0, alpha_max], got {self.alpha_init}")
        if not (self.alpha_tol > 0 and self.mean_tol > 0):
            raise UsageError("estimate tolerances must be positive")


@dataclass(frozen=True)
class ColorModelOptions:
    cov_eps: float = 1e-6
    kmeans_iters: int = 20
    kmeans_max_samples: int = 50000

    def __post_init__(self):
        if not self.cov_eps > 0:
            raise UsageError(f"cov_eps must be positive, got {self.cov_eps}")
        if self.kmeans_iters < 1 or self.kmeans_max_samples < 1:
            raise UsageError("kmeans_iters and kmeans_max_samples must be >= 1")


@dataclass(frozen=True)
class SynthOptions:
    sigma: float = 0.05
    sweeps: int = 200

    def __post_init__(self):
        if not self.sigma > 0:
            raise UsageError(f"synth sigma must be positive, got {self.sigma}")
        if self.sweeps < 1:
            raise UsageError(f"synth sweeps must be >= 1, got {self.sweeps}")


@dataclass(frozen=True)
class RunlogOptions:
    db_path: str = 'rsrg_runs.db'


@dataclass(frozen=True)
class Settings:
    lbp: LbpOptions = field(default_factory=LbpOptions)
    estimate: EstimateOptions = field(default_factory=EstimateOptions)
    colormodel: ColorModelOptions = field(default_factory=ColorModelOptions)
    synth: SynthOptions = field(default_factory=SynthOptions)
    runlog: RunlogOptions = field(default_factory=RunlogOptions)


def _overlay(section: Any, name: str, values: Optional[Dict]) -> Any:
    if values is None:
        return section
    if not isinstance(values, dict):
        raise UsageError(f"config section '{name}' must be a mapping")
    known = {f.name: f.type for f in fields(section)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise UsageError(f"unknown key(s) in config section '{name}': {', '.join(unknown)}")
    coerced = {}
    for key, value in values.items():
        current = getattr(section, key)
        # yaml reads 1e-8 (no dot) as a string
        try:
            coerced[key] = type(current)(value)
            # int() would truncate 2.7 to 2
            if isinstance(current, int) and float(value) != coerced[key]:
                raise ValueError(value)
        except (TypeError, ValueError):
            raise UsageError(f"config value {name}.{key}={value!r} is not a {type(current).__name__}")
    return replace(section, **coerced)


def load_config(path: Optional[str] = None) -> Settings:
    """
    Load settings from a YAML file layered over the built-in defaults.

    A missing file is not an error. With path=None the default `config.yml`
    in the working directory is tried.
    """
    settings = Settings()
    path = path or CONFIG_PATH
    if not os.path.exists(path):
        return settings

    with open(path, 'r') as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be a mapping")

    sections = {f.name for f in fields(Settings)}
    unknown = sorted(set(raw) - sections)
    if unknown:
        raise UsageError(f"unknown config section(s) in {path}: {', '.join(unknown)}")

    return Settings(**{
        name: _overlay(getattr(settings, name), name, raw.get(name))
        for name in sections
    })
