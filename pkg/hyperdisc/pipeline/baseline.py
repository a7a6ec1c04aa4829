# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Sparse regression applied directly to the sensor readings.

The readings are taken as nodal displacements of a coarse mesh built around
the sensors. Anchor nodes on the clamped edge are fixed; the free anchors get
an inverse-distance interpolation of their nearest sensors.
"""

import dataclasses
import logging
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from ..config import BenchmarkConfig
from ..decorators import log_time
from ..euclid import assemble_feature_matrix, discover, DiscoveredModel
from ..errors import InsufficientSensorsError, NoAdmissibleModelError, NumericalError
from ..mesh import build_sensor_mesh, DIM, Hole, Mesh, SensorSet
from ..solver import external_force
from .problem import evaluate_model, Problem

log: logging.Logger = logging.getLogger("hyperdisc")

NEIGHBOURS = 3


class BaselineStatus(Enum):
    DISCOVERED = "discovered"
    INSUFFICIENT_SENSORS = "insufficient sensors"
    NO_ADMISSIBLE_MODEL = "no admissible model"
    NUMERICAL_FAILURE = "numerical failure"


class BaselineResult(NamedTuple):
    status: BaselineStatus
    model: Optional[DiscoveredModel] = None
    message: str = ""
    eps_W: float = float("nan")
    eps_u: float = float("nan")
    sensor_mesh: Optional[Mesh] = None

    @property
    def ok(self) -> bool:
        return self.status == BaselineStatus.DISCOVERED


def interpolate_anchors(
    mesh: Mesh, n_sen: int, sensor_displacements: np.ndarray
) -> np.ndarray:
    """Nodal displacements of the sensor mesh, shape (n_nodes * 2,)."""
    u = np.zeros((mesh.n_nodes, DIM))
    u[:n_sen] = sensor_displacements.reshape(n_sen, DIM)
    anchors = np.arange(n_sen, mesh.n_nodes)
    clamped = set(mesh.dirichlet_nodes().tolist())
    free = np.array([node for node in anchors if node not in clamped], dtype=int)
    if free.size:
        k = min(NEIGHBOURS, n_sen)
        distance, index = cKDTree(mesh.nodes[:n_sen]).query(mesh.nodes[free], k=k)
        distance = np.atleast_2d(distance).reshape(free.size, k)
        index = np.atleast_2d(index).reshape(free.size, k)
        weights = 1.0 / np.maximum(distance, 1e-12)
        weights /= weights.sum(axis=1, keepdims=True)
        u[free] = np.einsum("ak,akd->ad", weights, u[:n_sen][index])
    return u.ravel()


@log_time
def run_euclid_baseline(
    y: np.ndarray,
    sensors: SensorSet,
    config: BenchmarkConfig,
    sensor_points: np.ndarray,
    hole: Optional[Hole] = None,
    problem: Optional[Problem] = None,
) -> BaselineResult:
    """Discover a model from the averaged readings on the sensor mesh.

    ``problem``, when given, is used to score the result against the truth.
    The volumetric penalty constraint is not imposed. The coarse mesh cannot
    balance the load to the loop tolerance, so tau is widened up to the
    empty-model RMSE and the sparsest model that explains any of the load is
    reported.
    """
    geometry = config.geometry
    try:
        mesh, n_sen = build_sensor_mesh(
            sensor_points, geometry.width, geometry.height, hole
        )
    except InsufficientSensorsError as error:
        log.warning("EUCLID baseline: %s", error)
        return BaselineResult(BaselineStatus.INSUFFICIENT_SENSORS, message=str(error))

    readings = np.atleast_2d(np.asarray(y, dtype=float)).mean(axis=0)
    u = interpolate_anchors(mesh, n_sen, readings)
    settings = dataclasses.replace(config.euclid, r=None)
    library = settings.library
    try:
        matrix = assemble_feature_matrix(mesh, u, library)
        force = external_force(mesh, config.load.load_case())[matrix.free_rows]
        model = discover(
            matrix.free, force, settings, library, max_tau=settings.reference_rmse
        )
    except NoAdmissibleModelError as error:
        log.warning("EUCLID baseline: %s", error)
        return BaselineResult(
            BaselineStatus.NO_ADMISSIBLE_MODEL, message=str(error), sensor_mesh=mesh
        )
    except NumericalError as error:
        log.warning("EUCLID baseline: %s", error)
        return BaselineResult(
            BaselineStatus.NUMERICAL_FAILURE, message=str(error), sensor_mesh=mesh
        )
    model.metadata["n_sen"] = sensors.n_sen
    log.info("EUCLID baseline discovered W = %s", model.expression())

    if problem is None:
        return BaselineResult(BaselineStatus.DISCOVERED, model=model, sensor_mesh=mesh)
    evaluation = evaluate_model(problem, model.params)
    return BaselineResult(
        BaselineStatus.DISCOVERED,
        model=model,
        eps_W=evaluation.eps_W,
        eps_u=evaluation.eps_u,
        sensor_mesh=mesh,
    )


def run_problem_baseline(problem: Problem) -> BaselineResult:
    return run_euclid_baseline(
        problem.y,
        problem.sensors,
        problem.config,
        problem.sensors.node_positions(problem.mesh),
        problem.mesh.hole,
        problem,
    )
