"""TOML run configuration.

Every table and key is checked against the schema below; unknown keys are a
:class:`~lcgalerkin.solver.ConfigError`. Example::

    [params]
    n = 32
    dt = 1e-3
    T = 0.5

    [grid]
    d = 2
    points = 50        # per axis; omit to pick the smallest alias-free size
    length = 1.0

    [noise]
    n_modes = 16
    a_u = 0.1

    [initial]
    preset = "smooth"

    [ensemble]
    paths = 4
    seed = 12345

    [output]
    dir = "out"
    checkpoint_every = 0
    monitor_every = 10
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from ..noise import NoiseModel
from ..solver import ConfigError, InitialData, RegularizationParams
from ..spectral import Grid


@dataclass(frozen=True)
class GridSpec:
    d: int = 2
    points: int | None = None
    length: float = 1.0

    def build(self, n: int) -> Grid:
        N = self.points if self.points is not None else default_points(n)
        if N < alias_free_points(n):
            raise ConfigError(f"grid.points={N} is too coarse for n={n} "
                              f"(need at least {alias_free_points(n)})")
        return Grid.cube(self.d, N, self.length)


def alias_free_points(n: int) -> int:
    """Smallest grid size with ``3 n < 2 N`` (quadratic products exact)."""
    return (3 * n) // 2 + 1


def default_points(n: int) -> int:
    # one spare point keeps cubic terms mostly resolved too
    return (3 * n) // 2 + 2


@dataclass(frozen=True)
class EnsembleSpec:
    paths: int = 1
    seed: int = 12345
    workers: int = 1
    fine_dt: float | None = None  # Brownian resolution shared by paired runs

    def __post_init__(self):
        if self.paths < 0:
            raise ConfigError("ensemble.paths must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("ensemble.seed must be an unsigned 64-bit integer")
        if self.workers < 1:
            raise ConfigError("ensemble.workers must be >= 1")


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "out"
    checkpoint_every: int = 0
    monitor_every: int = 10

    def __post_init__(self):
        if self.checkpoint_every < 0 or self.monitor_every < 1:
            raise ConfigError("output cadences must be positive")


@dataclass(frozen=True)
class MonitorSpec:
    energy: bool = True
    energy_sources: bool = False
    weak: bool = False
    test_kmax: int = 2
    renormalize_k: tuple = ()
    overshoot: bool = True
    integrability_theta: float | None = None
    flux_k: float | None = None


@dataclass(frozen=True)
class SweepConfig:
    eps: tuple = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
    delta: tuple = (1e-1, 3e-2, 1e-2)
    theta: float | None = None
    n_ref: int | None = None
    k_list: tuple = (1.0, 2.0, 4.0)
    snapshot_every: int = 5


@dataclass(frozen=True)
class RunConfig:
    params: RegularizationParams = field(default_factory=RegularizationParams)
    grid: GridSpec = field(default_factory=GridSpec)
    noise: NoiseModel = field(default_factory=NoiseModel)
    initial: InitialData = field(default_factory=InitialData)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    monitors: MonitorSpec = field(default_factory=MonitorSpec)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def make_grid(self) -> Grid:
        return self.grid.build(self.params.n)

    def with_params(self, **kw) -> "RunConfig":
        return replace(self, params=replace(self.params, **kw))

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            sub = getattr(self, f.name)
            out[f.name] = {g.name: _plain(getattr(sub, g.name)) for g in fields(sub)}
        return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


_SECTIONS = {
    "params": RegularizationParams,
    "grid": GridSpec,
    "noise": NoiseModel,
    "initial": InitialData,
    "ensemble": EnsembleSpec,
    "output": OutputSpec,
    "monitors": MonitorSpec,
    "sweep": SweepConfig,
}

# TOML spelling of parameter names that are not valid identifiers elsewhere
_ALIASES = {"params": {"epsilon": "eps", "Δt": "dt"}}


def _build(section: str, cls, table: dict):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    names = {f.name for f in fields(cls)}
    kw = {}
    for key, val in table.items():
        key = _ALIASES.get(section, {}).get(key, key)
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        if isinstance(val, list):
            if key == "shapes":
                val = tuple(tuple(int(i) for i in s) for s in val)
            else:
                val = tuple(val)
        kw[key] = val
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown table(s): {', '.join(sorted(unknown))}")
    parts = {name: _build(name, cls, data.get(name, {})) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(**parts)
    if cfg.noise.gamma != cfg.params.gamma:
        cfg = replace(cfg, noise=replace(cfg.noise, gamma=cfg.params.gamma))
    cfg.make_grid()  # validates grid against n
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {p}: {exc}") from exc
    return config_from_dict(data)


def default_config() -> RunConfig:
    return config_from_dict({})
