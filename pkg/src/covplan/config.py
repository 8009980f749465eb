"""Planner configuration: typed dataclasses with strict JSON round-trip.

One hierarchical JSON document configures the whole pipeline. Unknown keys
are rejected so typos fail loudly, and parse -> serialize -> parse is the
identity.
"""

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .connector import ConnectorParams
from .dynamics import (DoubleIntegrator, LinearObservation,
                       full_state_observation, position_observation)
from .errors import ConfigError
from .grid import TimeGrid
from .roadmap import BeliefNode, SamplerParams
from .sdf import CollisionCostParams

SCHEMA_VERSION = 1


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 2
    drag_coeff: float = 0.0
    epsilon: float = 0.01
    observation: str = "position"    # "position" | "full" | "none"
    observation_noise: float = 0.01

    def __post_init__(self):
        if self.observation not in ("position", "full", "none"):
            raise ConfigError(
                f"observation must be position/full/none, got {self.observation!r}")
        if self.observation != "none" and self.observation_noise <= 0:
            raise ConfigError("observation noise must be positive")

    def build(self) -> DoubleIntegrator:
        n = 2 * self.dim
        if self.observation == "position":
            obs = position_observation(self.dim, self.observation_noise)
        elif self.observation == "full":
            obs = full_state_observation(n, self.observation_noise)
        else:
            obs = None
        return DoubleIntegrator(dim=self.dim, drag_coeff=self.drag_coeff,
                                epsilon=self.epsilon, observation=obs)


@dataclass(frozen=True)
class GridConfig:
    horizon: float = 1.0
    steps: int = 50

    def build(self) -> TimeGrid:
        return TimeGrid(self.horizon, self.steps)


@dataclass(frozen=True)
class ConnectorConfig:
    step_size: float = 0.001
    max_iterations: int = 50
    tolerance: float = 1e-4
    innovation_noise: bool = False

    def build(self) -> ConnectorParams:
        return ConnectorParams(step_size=self.step_size,
                               max_iterations=self.max_iterations,
                               tolerance=self.tolerance,
                               innovation_noise=self.innovation_noise)


@dataclass(frozen=True)
class CollisionConfig:
    margin: float = 0.5
    weight: float = 1.0
    threshold: float = 0.0

    def build(self) -> CollisionCostParams:
        return CollisionCostParams(margin=self.margin, weight=self.weight,
                                   threshold=self.threshold)


@dataclass(frozen=True)
class SamplerConfig:
    confidence: float = 0.95
    clearance: float = 0.1
    velocity_var: float = 0.02
    error_fraction: float = 0.25
    neighbor_count: int | None = None
    radius: float | None = None
    max_samples: int = 10_000
    quantile_inflation: float = 1.02

    def build(self) -> SamplerParams:
        return SamplerParams(confidence=self.confidence,
                             clearance=self.clearance,
                             velocity_var=self.velocity_var,
                             error_fraction=self.error_fraction,
                             neighbor_count=self.neighbor_count,
                             radius=self.radius,
                             max_samples=self.max_samples,
                             quantile_inflation=self.quantile_inflation)


@dataclass(frozen=True)
class BeliefSpec:
    """Start/goal belief: mean plus diagonal covariance (full matrices are
    supported through ``sigma``); the estimator prior defaults to the
    sampler's error fraction of the covariance."""

    mean: tuple
    sigma_diag: tuple | None = None
    sigma: tuple | None = None          # row-major nested lists
    error_fraction: float | None = None

    def __post_init__(self):
        if (self.sigma_diag is None) == (self.sigma is None):
            raise ConfigError("give exactly one of sigma_diag or sigma")
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        if self.sigma_diag is not None:
            object.__setattr__(self, "sigma_diag",
                               tuple(float(v) for v in self.sigma_diag))
        if self.sigma is not None:
            object.__setattr__(self, "sigma",
                               tuple(tuple(float(v) for v in row)
                                     for row in self.sigma))

    def build(self, node_id: int, default_error_fraction: float) -> BeliefNode:
        mean = np.asarray(self.mean, dtype=float)
        if self.sigma_diag is not None:
            Sigma = np.diag(np.asarray(self.sigma_diag, dtype=float))
        else:
            Sigma = np.asarray(self.sigma, dtype=float)
        if Sigma.shape != (mean.size, mean.size):
            raise ConfigError("belief covariance shape does not match mean")
        beta = (self.error_fraction if self.error_fraction is not None
                else default_error_fraction)
        return BeliefNode(id=node_id, mean=mean, Sigma=Sigma, P0=beta * Sigma)


@dataclass(frozen=True)
class PlannerConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    connector: ConnectorConfig = field(default_factory=ConnectorConfig)
    collision: CollisionConfig = field(default_factory=CollisionConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    start: BeliefSpec | None = None
    goal: BeliefSpec | None = None
    alpha: float = 0.2
    seed: int = 0
    workers: int = 1
    n_samples: int = 30

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be nonnegative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.n_samples < 0:
            raise ConfigError("n_samples must be nonnegative")


_SECTIONS = {
    "model": ModelConfig,
    "grid": GridConfig,
    "connector": ConnectorConfig,
    "collision": CollisionConfig,
    "sampler": SamplerConfig,
    "start": BeliefSpec,
    "goal": BeliefSpec,
}


def _build_section(cls, data, where):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    _check_keys(data, [f.name for f in fields(cls)], where)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc


def config_from_dict(data: dict) -> PlannerConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    allowed = [f.name for f in fields(PlannerConfig)] + ["schema_version"]
    _check_keys(data, allowed, "config")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}")
    kwargs = {}
    for key, value in data.items():
        if key == "schema_version":
            continue
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        else:
            kwargs[key] = value
    try:
        return PlannerConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def config_to_dict(cfg: PlannerConfig) -> dict:
    out = {"schema_version": SCHEMA_VERSION}
    for f in fields(PlannerConfig):
        value = getattr(cfg, f.name)
        if value is None:
            continue
        if f.name in _SECTIONS:
            section = {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in asdict(value).items()}
            if f.name in ("start", "goal"):
                section = {k: v for k, v in section.items() if v is not None}
                if "sigma" in section:
                    section["sigma"] = [list(row) for row in section["sigma"]]
            out[f.name] = section
        else:
            out[f.name] = value
    return out


def load_config(path) -> PlannerConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: PlannerConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
