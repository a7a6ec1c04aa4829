# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""The four stages of one statFEM-EUCLID iteration."""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from ..constitutive import as_material, MaterialParams
from ..euclid import (
    assemble_feature_matrix,
    DiscoveredModel,
    lambda_path,
    normalize,
    ParetoPoint,
    select_widening,
)
from ..errors import (
    InvertedElementError,
    NewtonDivergenceError,
    NoAdmissibleModelError,
)
from ..pce import build_forecast, Forecast as PCEForecast, pce_moments
from ..solver import AnyMaterial, external_force
from ..statfem import (
    GaussianField,
    posterior_update,
    predict_at_sensors,
    rmse_sensors,
    with_discrepancy,
)
from . import PipelineStep, Summary
from .problem import evaluate_model, Problem

log: logging.Logger = logging.getLogger("hyperdisc")


class Fallback(NamedTuple):
    """The model a fresh discovery replaced, restored if the new one fails."""

    material: AnyMaterial
    model: Optional[DiscoveredModel]
    eps_W: float
    eps_u: float


@dataclass
class LoopState:
    problem: Problem
    # model used to forecast the displacement field
    material: AnyMaterial
    iteration: int = 1
    jobs: int = 1
    # set once a hyperelastic model exists
    model: Optional[DiscoveredModel] = None
    forecast: Optional[PCEForecast] = None
    prior: Optional[GaussianField] = None
    posterior: Optional[GaussianField] = None
    rmse: float = float("inf")
    converged: bool = False
    # results of the Discover step of this iteration
    path: List[ParetoPoint] = field(default_factory=list)
    discovered: bool = False
    tau: Optional[float] = None
    eps_W: float = float("nan")
    eps_u: float = float("nan")
    fallback: Optional[Fallback] = None

    @property
    def hyperelastic(self) -> bool:
        return not as_material(self.material).is_linear

    def next_iteration(self) -> "LoopState":
        return LoopState(
            problem=self.problem,
            material=self.material,
            iteration=self.iteration + 1,
            jobs=self.jobs,
            model=self.model,
            posterior=self.posterior,
            rmse=self.rmse,
            eps_W=self.eps_W,
            eps_u=self.eps_u,
            fallback=self.fallback,
        )


class Forecast(PipelineStep[LoopState, LoopState]):
    """Propagate the random traction through the current model.

    The chaos covariance is widened by the model-error covariance. When the
    forward solves of a freshly discovered model fail even with refined load
    steps, that model is dropped and the one it replaced forecasts instead.
    """

    def run(self, input: LoopState, summary: Summary) -> Tuple[LoopState, Summary]:
        try:
            forecast = self._build(input)
        except (InvertedElementError, NewtonDivergenceError) as error:
            fallback = input.fallback
            if fallback is None:
                raise
            log.warning(
                "Iteration %d: cannot forecast with %s (%s); reverting to %s",
                input.iteration,
                as_material(input.material).describe(),
                error,
                as_material(fallback.material).describe(),
            )
            input.material = fallback.material
            input.model = fallback.model
            input.eps_W = fallback.eps_W
            input.eps_u = fallback.eps_u
            input.fallback = None
            summary["reverted"] = True
            forecast = self._build(input)

        input.forecast = forecast
        prior = pce_moments(forecast.expansion)
        problem = input.problem
        sigma = problem.config.discrepancy.sigma(prior.mean)
        if sigma > 0.0:
            prior = with_discrepancy(prior, sigma ** 2 * problem.unit_discrepancy)
        input.prior = prior
        summary["holdout_error"] = forecast.holdout_error
        summary["discrepancy_sigma"] = sigma
        return input, summary

    def _build(self, input: LoopState) -> PCEForecast:
        problem = input.problem
        config = problem.config
        return build_forecast(
            problem.mesh,
            input.material,
            config.pce.random_field(config.load),
            problem.load,
            config.solver,
            config.pce.settings(),
            problem.pce_rng,
            input.jobs,
        )


class Assimilate(PipelineStep[LoopState, LoopState]):
    def run(self, input: LoopState, summary: Summary) -> Tuple[LoopState, Summary]:
        assert input.prior is not None
        input.posterior = posterior_update(input.prior, input.problem.observations())
        return input, summary


class ConvergenceCheck(PipelineStep[LoopState, LoopState]):
    """Compare the assimilated state with the readings at the sensors."""

    def run(self, input: LoopState, summary: Summary) -> Tuple[LoopState, Summary]:
        assert input.posterior is not None
        problem = input.problem
        observations = problem.observations()
        prediction = predict_at_sensors(input.posterior, observations.H)
        input.rmse = rmse_sensors(
            prediction.mean, observations.y_mean, problem.sensors.n_sen
        )
        tolerance = problem.config.tolerance()
        input.converged = input.rmse < tolerance
        log.info(
            "Iteration %d: RMSE_u = %.3e (TOL %.3e)%s",
            input.iteration,
            input.rmse,
            tolerance,
            ", converged" if input.converged else "",
        )
        summary["tolerance"] = tolerance
        return input, summary


class Discover(PipelineStep[LoopState, LoopState]):
    """Sparse regression on the assimilated mean field.

    Skipped once the loop has converged with a hyperelastic model: that model
    produced the forecast that matched the data. A model that cannot carry
    the full load in a forward solve is reported but not adopted.
    """

    def __init__(self, update_model: bool = True) -> None:
        self.update_model = update_model

    def run(self, input: LoopState, summary: Summary) -> Tuple[LoopState, Summary]:
        input.path = []
        input.discovered = False
        if input.converged and input.hyperelastic:
            return input, summary
        assert input.posterior is not None

        problem = input.problem
        settings = problem.config.euclid
        library = settings.library
        matrix = assemble_feature_matrix(problem.mesh, input.posterior.mean, library)
        force = external_force(problem.mesh, problem.load)[matrix.free_rows]
        regression = normalize(matrix.free, force, settings.reference_rmse)
        input.path = lambda_path(regression.A, regression.p, settings, library)

        model = self._select(input, settings.tau, settings.reference_rmse)
        if model is None:
            return input, summary
        model.metadata.update(
            {
                "n_rows": regression.n_rows,
                "scale": regression.scale,
                "tau": input.tau,
                "iteration": input.iteration,
            }
        )
        evaluation = evaluate_model(problem, model.params)
        log.info(
            "Iteration %d discovered W = %s (eps_W %.2e, eps_u %.2e)",
            input.iteration,
            model.expression(),
            evaluation.eps_W,
            evaluation.eps_u,
        )
        if evaluation.u_disc is None:
            log.warning(
                "Iteration %d keeps the previous model: %s does not carry the load",
                input.iteration,
                model.expression(),
            )
            return input, summary

        input.discovered = True
        if self.update_model:
            input.fallback = Fallback(
                input.material, input.model, input.eps_W, input.eps_u
            )
            input.material = as_material(model.params)
        input.model = model
        input.eps_W = evaluation.eps_W
        input.eps_u = evaluation.eps_u
        return input, summary

    def _select(
        self, input: LoopState, tau: float, ceiling: float
    ) -> Optional[DiscoveredModel]:
        """Pick the sparsest admissible model.

        Before the first hyperelastic model exists, an empty admissible set is
        re-read with tau doubled, up to ``loop.max_relaxed_tau``.
        """
        config = input.problem.config
        limit = tau
        if config.loop.relax_tau and input.model is None:
            limit = max(tau, min(ceiling, config.loop.max_relaxed_tau))
        try:
            model, input.tau = select_widening(
                input.path, tau, limit, config.euclid.library
            )
            return model
        except NoAdmissibleModelError as error:
            log.warning("Iteration %d keeps the previous model: %s", input.iteration, error)
            input.tau = limit
            return None


def truth_as_model(params: MaterialParams) -> DiscoveredModel:
    """Wrap known coefficients as a discovery result."""
    return DiscoveredModel(
        kappa_star=np.array(params.kappa, dtype=float),
        lambda_star=float("nan"),
        active_set=tuple(int(i) for i in params.active_set()),
        library=params.library,
        metadata={"source": "initial"},
    )
