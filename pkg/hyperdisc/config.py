# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Benchmark configuration.

A run is described by one JSON document whose sections map onto frozen
dataclasses. Every physical constant of the benchmarks lives here as a
default, never in the numerical modules' logic.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Type, TypeVar, Union

import numpy as np
import xxhash
from munch import Munch

from .constitutive import FeatureLibrary, lame_parameters, MaterialParams, NAMED_MODELS
from .errors import ConfigError
from .euclid import EuclidSettings
from .mesh import SENSOR_PRESETS
from .pce import PCESettings, TractionRandomField
from .solver import LoadCase, SolverSettings
from .statfem import default_tolerance

log: logging.Logger = logging.getLogger("hyperdisc")

T = TypeVar("T")


@dataclass(frozen=True)
class GeometryConfig:
    width: float = 1.0
    height: float = 1.0
    hole_radius: float = 0.25
    refinement: int = 3


@dataclass(frozen=True)
class SensorConfig:
    preset: Optional[str] = "dense38"
    # explicit coordinates take precedence over the preset
    positions: Optional[List[List[float]]] = None

    def __post_init__(self) -> None:
        if self.positions is None and self.preset not in SENSOR_PRESETS:
            raise ConfigError(
                f"unknown sensor preset `{self.preset}`; "
                f"expected one of {', '.join(SENSOR_PRESETS)}"
            )

    @property
    def layout(self) -> Union[str, List[List[float]]]:
        if self.positions is not None:
            return self.positions
        assert self.preset is not None
        return self.preset

    @property
    def label(self) -> str:
        return self.preset if self.positions is None else f"custom{len(self.positions)}"


@dataclass(frozen=True)
class TruthConfig:
    model: str = "neo-hookean"
    # explicit coefficients override the named model
    coefficients: Optional[Dict[str, float]] = None
    n_mr: int = 3
    n_vol: int = 1

    def __post_init__(self) -> None:
        if self.coefficients is None and self.model not in NAMED_MODELS:
            raise ConfigError(
                f"unknown truth model `{self.model}`; "
                f"expected one of {', '.join(NAMED_MODELS)}"
            )

    @property
    def library(self) -> FeatureLibrary:
        return FeatureLibrary(self.n_mr, self.n_vol)

    def params(self) -> MaterialParams:
        if self.coefficients is not None:
            return MaterialParams.from_named(self.coefficients, self.library)
        return NAMED_MODELS[self.model](self.library)


@dataclass(frozen=True)
class PriorConfig:
    E: float = 1.35
    nu: float = 0.35

    def __post_init__(self) -> None:
        lame_parameters(self.E, self.nu)


@dataclass(frozen=True)
class LoadConfig:
    t_max: float = 0.5
    eta: float = 1.0

    def load_case(self) -> LoadCase:
        return LoadCase(traction=(self.t_max, 0.0), eta=self.eta)


@dataclass(frozen=True)
class PCEConfig:
    order: int = 3
    n_samples: int = 20
    # traction standard deviation as a fraction of t_max
    sigma_ratio: float = 0.05
    jitter: bool = False
    holdout: int = 0

    def __post_init__(self) -> None:
        if self.sigma_ratio < 0.0:
            raise ConfigError("pce.sigma_ratio must be >= 0")
        self.settings()

    def settings(self) -> PCESettings:
        return PCESettings(
            order=self.order,
            n_samples=self.n_samples,
            jitter=self.jitter,
            holdout=self.holdout,
        )

    def random_field(self, load: LoadConfig) -> TractionRandomField:
        return TractionRandomField(
            mu_t=(load.t_max, 0.0), sigma_t=(self.sigma_ratio * load.t_max, 0.0)
        )


@dataclass(frozen=True)
class NoiseConfig:
    sigma_e: float = 1e-4
    n_r: int = 1
    # likelihood noise used when sigma_e is zero
    sigma_floor: float = 1e-8

    def __post_init__(self) -> None:
        if self.sigma_e < 0.0:
            raise ConfigError(f"noise.sigma_e must be >= 0, got {self.sigma_e}")
        if self.n_r < 1:
            raise ConfigError("noise.n_r must be >= 1")
        if self.sigma_floor <= 0.0:
            raise ConfigError("noise.sigma_floor must be positive")

    @property
    def likelihood_sigma(self) -> float:
        return max(self.sigma_e, self.sigma_floor)


@dataclass(frozen=True)
class DiscrepancyConfig:
    # model-error standard deviation as a fraction of the largest forecast
    # displacement; 0 assimilates with the chaos covariance alone
    ratio: float = 0.05
    # correlation length of the model error, mm
    length: float = 0.25

    def __post_init__(self) -> None:
        if self.ratio < 0.0:
            raise ConfigError("discrepancy.ratio must be >= 0")
        if self.length <= 0.0:
            raise ConfigError("discrepancy.length must be positive")

    def sigma(self, mean: np.ndarray) -> float:
        return self.ratio * float(np.max(np.abs(mean), initial=0.0))


@dataclass(frozen=True)
class LoopConfig:
    max_iterations: int = 10
    # convergence threshold for the sensor RMSE; None derives it from the noise
    tol: Optional[float] = None
    # optional lower bound on the derived threshold
    tol_floor: float = 0.0
    # assimilate with the initial model only, no model updates
    freeze: bool = False
    # start from the truth model instead of the linear elastic prior
    start_from_truth: bool = False
    # widen tau while no hyperelastic model has been found yet
    relax_tau: bool = True
    # largest tau the widening may reach
    max_relaxed_tau: float = 2000.0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError("loop.max_iterations must be >= 1")
        if self.tol is not None and self.tol <= 0.0:
            raise ConfigError("loop.tol must be positive")
        if self.tol_floor < 0.0:
            raise ConfigError("loop.tol_floor must be >= 0")
        if self.max_relaxed_tau <= 0.0:
            raise ConfigError("loop.max_relaxed_tau must be positive")


SECTIONS: Dict[str, Type[Any]] = {
    "geometry": GeometryConfig,
    "sensors": SensorConfig,
    "truth": TruthConfig,
    "prior": PriorConfig,
    "load": LoadConfig,
    "solver": SolverSettings,
    "pce": PCEConfig,
    "noise": NoiseConfig,
    "discrepancy": DiscrepancyConfig,
    "loop": LoopConfig,
    "euclid": EuclidSettings,
}


def _build_section(name: str, cls: Type[T], values: Mapping[str, Any]) -> T:
    if not isinstance(values, Mapping):
        raise ConfigError(f"`{name}` must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in values:
        if key not in known:
            raise ConfigError(f"unknown configuration key `{name}.{key}`")
    try:
        return cls(**values)
    except ConfigError as error:
        raise ConfigError(f"invalid `{name}` section: {error}")
    except (TypeError, ValueError) as error:
        raise ConfigError(f"invalid `{name}` section: {error}")


def _section_dict(section: Any) -> Dict[str, Any]:
    values = dataclasses.asdict(section)
    return {
        key: list(value) if isinstance(value, tuple) else value
        for key, value in values.items()
    }


@dataclass(frozen=True)
class BenchmarkConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    truth: TruthConfig = field(default_factory=TruthConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)
    load: LoadConfig = field(default_factory=LoadConfig)
    solver: SolverSettings = field(default_factory=SolverSettings)
    pce: PCEConfig = field(default_factory=PCEConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    discrepancy: DiscrepancyConfig = field(default_factory=DiscrepancyConfig)
    loop: LoopConfig = field(default_factory=LoopConfig)
    euclid: EuclidSettings = field(default_factory=EuclidSettings)
    seed: int = 0
    jobs: int = 1

    @staticmethod
    def from_dict(document: Mapping[str, Any]) -> "BenchmarkConfig":
        sections: Dict[str, Any] = {}
        for key, value in document.items():
            if key in SECTIONS:
                sections[key] = _build_section(key, SECTIONS[key], value)
            elif key in ("seed", "jobs"):
                if not isinstance(value, int) or isinstance(value, bool):
                    raise ConfigError(f"`{key}` must be an integer")
                sections[key] = value
            else:
                raise ConfigError(f"unknown configuration key `{key}`")
        config = BenchmarkConfig(**sections)
        if config.jobs < 1:
            raise ConfigError("`jobs` must be >= 1")
        return config

    @staticmethod
    def from_file(path: Union[str, Path]) -> "BenchmarkConfig":
        try:
            document = json.loads(Path(path).read_text())
        except json.JSONDecodeError as error:
            raise ConfigError(f"{path} is not valid JSON: {error}")
        return BenchmarkConfig.from_dict(document)

    def to_dict(self) -> Dict[str, Any]:
        document: Dict[str, Any] = {
            name: _section_dict(getattr(self, name)) for name in SECTIONS
        }
        document["seed"] = self.seed
        document["jobs"] = self.jobs
        return document

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def fingerprint(self) -> str:
        # jobs does not change results
        document = self.to_dict()
        document.pop("jobs")
        hash_gen = xxhash.xxh64()
        hash_gen.update(json.dumps(document, sort_keys=True).encode("utf-8"))
        return hash_gen.hexdigest()

    def with_overrides(self, overrides: Iterable[str]) -> "BenchmarkConfig":
        """Apply ``section.key=value`` assignments; values parse as JSON and
        fall back to plain strings."""
        overrides = list(overrides)
        if not overrides:
            return self
        tree = Munch.fromDict(self.to_dict())
        for assignment in overrides:
            key, separator, raw = assignment.partition("=")
            if not separator or not key:
                raise ConfigError(f"override `{assignment}` is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            *parents, leaf = key.strip().split(".")
            node = tree
            for parent in parents:
                if parent not in node or not isinstance(node[parent], Munch):
                    raise ConfigError(f"unknown configuration key `{key}`")
                node = node[parent]
            if leaf not in node:
                raise ConfigError(f"unknown configuration key `{key}`")
            node[leaf] = value
        return BenchmarkConfig.from_dict(tree.toDict())

    def replace(self, **changes: Any) -> "BenchmarkConfig":
        return dataclasses.replace(self, **changes)

    def rngs(self) -> Tuple[np.random.Generator, np.random.Generator]:
        """(noise, PCE sampling) generators derived from the master seed."""
        noise, sampling = np.random.SeedSequence(self.seed).spawn(2)
        return np.random.default_rng(noise), np.random.default_rng(sampling)

    def tolerance(self) -> float:
        if self.loop.tol is not None:
            return self.loop.tol
        return default_tolerance(self.noise.likelihood_sigma, self.loop.tol_floor)
