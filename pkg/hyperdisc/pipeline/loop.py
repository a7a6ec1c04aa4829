# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Iterative data assimilation and model discovery.

Each iteration forecasts the displacement field with the current model,
conditions it on the sensor readings, checks the sensor RMSE against the
noise-level tolerance and, unless converged, discovers a new model from the
assimilated mean field. The loop starts from a linear elastic prior.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..config import BenchmarkConfig
from ..constitutive import as_material
from ..decorators import log_time
from ..euclid import DiscoveredModel, ParetoPoint
from ..errors import NoAdmissibleModelError
from ..statfem import GaussianField
from . import Pipeline, total_seconds
from .problem import prepare_problem, Problem
from .steps import (
    Assimilate,
    ConvergenceCheck,
    Discover,
    Forecast,
    LoopState,
    truth_as_model,
)

log: logging.Logger = logging.getLogger("hyperdisc")


@dataclass
class IterationRecord:
    iteration: int
    rmse_u: float
    converged: bool
    # model in use at the end of the iteration, None before the first discovery
    expression: Optional[str]
    kappa: Optional[np.ndarray]
    n_active: int
    lambda_star: float
    tau: Optional[float]
    discovered: bool
    eps_W: float
    eps_u: float
    holdout_error: Optional[float] = None
    seconds: float = 0.0
    pareto_path: List[ParetoPoint] = field(default_factory=list)


@dataclass
class DiscoveryHistory:
    records: List[IterationRecord] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def rmse(self) -> List[float]:
        return [record.rmse_u for record in self.records]

    def append(self, state: LoopState, summary: Dict[str, Any]) -> IterationRecord:
        model = state.model
        record = IterationRecord(
            iteration=state.iteration,
            rmse_u=state.rmse,
            converged=state.converged,
            expression=model.expression() if model is not None else None,
            kappa=model.kappa_star.copy() if model is not None else None,
            n_active=len(model.active_set) if model is not None else 0,
            lambda_star=model.lambda_star if model is not None else float("nan"),
            tau=state.tau,
            discovered=state.discovered,
            eps_W=state.eps_W,
            eps_u=state.eps_u,
            holdout_error=summary.get("holdout_error"),
            seconds=total_seconds(summary),
            pareto_path=list(state.path),
        )
        self.records.append(record)
        return record

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "iteration": [r.iteration for r in self.records],
                "rmse_u": [r.rmse_u for r in self.records],
                "converged": [r.converged for r in self.records],
                "discovered": [r.discovered for r in self.records],
                "model": [r.expression or "" for r in self.records],
                "n_active": [r.n_active for r in self.records],
                "lambda_star": [r.lambda_star for r in self.records],
                "tau": [r.tau for r in self.records],
                "eps_W": [r.eps_W for r in self.records],
                "eps_u": [r.eps_u for r in self.records],
                "seconds": [r.seconds for r in self.records],
            }
        )


@dataclass
class StatFEMEuclidResult:
    model: DiscoveredModel
    history: DiscoveryHistory
    problem: Problem
    posterior: GaussianField
    eps_W: float
    eps_u: float

    @property
    def converged(self) -> bool:
        return self.history.converged

    @property
    def iterations(self) -> int:
        return len(self.history)


def _initial_state(problem: Problem, jobs: int) -> LoopState:
    if problem.config.loop.start_from_truth:
        model = truth_as_model(problem.truth)
        return LoopState(
            problem=problem,
            material=as_material(problem.truth),
            jobs=jobs,
            model=model,
            eps_W=0.0,
            eps_u=0.0,
        )
    return LoopState(problem=problem, material=problem.prior_material(), jobs=jobs)


@log_time
def run_statfem_euclid(
    config: BenchmarkConfig,
    problem: Optional[Problem] = None,
    jobs: Optional[int] = None,
) -> StatFEMEuclidResult:
    """Run the loop until the sensor RMSE drops below the tolerance or the
    iteration budget is spent.

    Raises NoAdmissibleModelError when no iteration produced a model.
    """
    problem = problem or prepare_problem(config)
    loop = config.loop
    freeze = loop.freeze
    pipeline = Pipeline(
        [Forecast(), Assimilate(), ConvergenceCheck(), Discover(not freeze)]
    )

    history = DiscoveryHistory()
    state = _initial_state(problem, jobs or config.jobs)
    best_rmse = float("inf")
    while True:
        state, summary = pipeline.run(state, {"iteration": state.iteration})
        history.append(state, summary)
        if state.path:
            best_rmse = min(best_rmse, min(point.rmse for point in state.path))
        if state.converged:
            history.converged = True
            break
        if freeze:
            break
        if state.iteration >= loop.max_iterations:
            log.warning(
                "Not converged after %d iterations (RMSE_u %.3e); more sensors may help",
                state.iteration,
                state.rmse,
            )
            break
        state = state.next_iteration()

    if state.model is None:
        raise NoAdmissibleModelError(
            "no admissible model was found in any iteration",
            best_rmse,
        )
    assert state.posterior is not None
    return StatFEMEuclidResult(
        model=state.model,
        history=history,
        problem=problem,
        posterior=state.posterior,
        eps_W=state.eps_W,
        eps_u=state.eps_u,
    )
