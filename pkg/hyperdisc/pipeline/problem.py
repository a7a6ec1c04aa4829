# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Synthetic benchmark data: ground-truth solve and noisy sensor readings."""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Union

import numpy as np

from ..config import BenchmarkConfig
from ..constitutive import LinearElasticMaterial, MaterialParams
from ..decorators import log_time
from ..errors import ConfigError, NumericalError
from ..mesh import build_plate_with_hole, Mesh, place_sensors, SensorSet
from ..metrics import error_eps_u, error_eps_W, invariant_ranges, InvariantRanges
from ..solver import (
    DisplacementField,
    LoadCase,
    solve_with_retries,
    SolverSettings,
)
from ..statfem import ObservationSet, squared_exponential_covariance

log: logging.Logger = logging.getLogger("hyperdisc")


class Measurements(NamedTuple):
    # readings, shape (n_r, n_gsen)
    y: np.ndarray
    u_true: DisplacementField


def generate_synthetic_data(
    truth: MaterialParams,
    mesh: Mesh,
    sensors: SensorSet,
    sigma_e: float,
    seed: Union[int, np.random.Generator, None] = 0,
    n_r: int = 1,
    load: Optional[LoadCase] = None,
    settings: Optional[SolverSettings] = None,
    u_true: Optional[DisplacementField] = None,
) -> Measurements:
    """y = H u_true + e with e ~ N(0, sigma_e^2 I), one row per reading."""
    if sigma_e < 0.0:
        raise ConfigError(f"sigma_e must be >= 0, got {sigma_e}")
    if u_true is None:
        u_true = solve_with_retries(mesh, truth, load or LoadCase(), settings)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    exact = u_true.u[sensors.dof_indices]
    noise = rng.normal(0.0, 1.0, size=(n_r, exact.size)) * sigma_e
    return Measurements(y=exact[None, :] + noise, u_true=u_true)


@dataclass
class Problem:
    config: BenchmarkConfig
    mesh: Mesh
    sensors: SensorSet
    truth: MaterialParams
    load: LoadCase
    measurements: Measurements
    ranges: InvariantRanges
    pce_rng: np.random.Generator

    @property
    def u_true(self) -> DisplacementField:
        return self.measurements.u_true

    @property
    def y(self) -> np.ndarray:
        return self.measurements.y

    def observations(self) -> ObservationSet:
        return ObservationSet.from_sensors(
            self.sensors,
            self.mesh.n_gdof,
            self.y,
            self.config.noise.likelihood_sigma,
            self.config.noise.n_r,
        )

    def prior_material(self) -> LinearElasticMaterial:
        return LinearElasticMaterial(self.config.prior.E, self.config.prior.nu)

    @cached_property
    def unit_discrepancy(self) -> np.ndarray:
        """Model-error covariance with unit standard deviation."""
        return squared_exponential_covariance(
            self.mesh.nodes,
            1.0,
            self.config.discrepancy.length,
            self.mesh.dirichlet_dofs,
        )


class Evaluation(NamedTuple):
    eps_W: float
    eps_u: float
    u_disc: Optional[DisplacementField]


@log_time
def prepare_problem(
    config: BenchmarkConfig, u_true: Optional[DisplacementField] = None
) -> Problem:
    geometry = config.geometry
    mesh = build_plate_with_hole(
        geometry.width, geometry.height, geometry.hole_radius, geometry.refinement
    )
    sensors = place_sensors(mesh, config.sensors.layout)
    truth = config.truth.params()
    load = config.load.load_case()
    noise_rng, pce_rng = config.rngs()
    measurements = generate_synthetic_data(
        truth,
        mesh,
        sensors,
        config.noise.sigma_e,
        noise_rng,
        config.noise.n_r,
        load,
        config.solver,
        u_true,
    )
    log.info(
        "Prepared %s benchmark: %d nodes, %d sensors, sigma_e=%g",
        config.truth.model,
        mesh.n_nodes,
        sensors.n_sen,
        config.noise.sigma_e,
    )
    return Problem(
        config=config,
        mesh=mesh,
        sensors=sensors,
        truth=truth,
        load=load,
        measurements=measurements,
        ranges=invariant_ranges(mesh, measurements.u_true.u),
        pce_rng=pce_rng,
    )


def evaluate_model(problem: Problem, params: MaterialParams) -> Evaluation:
    """eps_W on the truth invariant ranges and eps_u from a forward solve."""
    eps_W = error_eps_W(problem.truth, params, problem.ranges).value
    try:
        u_disc = solve_with_retries(
            problem.mesh, params, problem.load, problem.config.solver
        )
    except NumericalError as error:
        # a spurious model may not support the full load
        log.warning("Forward solve with %s failed: %s", params.expression(), error)
        return Evaluation(eps_W=eps_W, eps_u=float("nan"), u_disc=None)
    return Evaluation(
        eps_W=eps_W,
        eps_u=error_eps_u(u_disc.u, problem.u_true.u),
        u_disc=u_disc,
    )
