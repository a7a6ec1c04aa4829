# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

import os
from typing import Any, Callable, List
from unittest import mock, skipUnless, TestCase

import numpy as np

from ... import __name__ as client
from ...config import BenchmarkConfig, SensorConfig
from ...constitutive import as_material, DEFAULT_LIBRARY, LinearElasticMaterial, neo_hookean
from ...errors import InvertedElementError, NewtonDivergenceError, NoAdmissibleModelError
from ...euclid import ParetoPoint
from ...mesh import build_plate_with_hole
from ...pce import Forecast, PCExpansion, pce_moments
from ...statfem import GaussianField
from ..loop import run_statfem_euclid
from ..problem import Evaluation, prepare_problem, Problem
from ..steps import (
    Assimilate,
    Discover,
    Fallback,
    Forecast as ForecastStep,
    LoopState,
    truth_as_model,
)

BUILD_FORECAST = f"{client}.pipeline.steps.build_forecast"
LAMBDA_PATH = f"{client}.pipeline.steps.lambda_path"
EVALUATE_MODEL = f"{client}.pipeline.steps.evaluate_model"
RUN_SLOW = os.environ.get("HYPERDISC_RUN_SLOW") == "1"


def forecast_around(mean: np.ndarray, spread: float) -> Callable[..., Forecast]:
    """A stand-in for the chaos forecast centred on ``mean``."""

    def build(*args: Any, **kwargs: Any) -> Forecast:
        expansion = PCExpansion(np.stack([mean, spread * mean]))
        return Forecast(expansion=expansion, nodes=np.zeros(1), holdout_error=None)

    return build


def point(lam: float, rmse: float, n_active: int) -> ParetoPoint:
    kappa = np.zeros(DEFAULT_LIBRARY.n_phi)
    kappa[:n_active] = 1.0
    return ParetoPoint(lam, kappa, rmse, float(n_active), n_active)


class StatFEMEuclidLoopTest(TestCase):
    problem: Problem

    @classmethod
    def setUpClass(cls) -> None:
        cls.problem = prepare_problem(
            BenchmarkConfig().with_overrides(["noise.sigma_e=0"])
        )

    def test_exact_forecast_converges_in_one_iteration(self) -> None:
        problem = self.problem
        with mock.patch(BUILD_FORECAST, forecast_around(problem.u_true.u, 1e-4)):
            result = run_statfem_euclid(problem.config, problem)
        self.assertTrue(result.converged)
        self.assertEqual(result.iterations, 1)
        self.assertEqual(result.history.rmse, [0.0])
        record = result.history.records[0]
        self.assertTrue(record.discovered)
        names = DEFAULT_LIBRARY.names()
        self.assertEqual([names[i] for i in result.model.active_set], ["A10", "B1"])
        self.assertLess(result.eps_W, 1e-3)
        frame = result.history.to_frame()
        self.assertEqual(frame["iteration"].tolist(), [1])
        self.assertGreaterEqual(frame["seconds"][0], 0.0)

    def test_start_from_truth_skips_discovery(self) -> None:
        config = self.problem.config.with_overrides(["loop.start_from_truth=true"])
        problem = prepare_problem(config, u_true=self.problem.u_true)
        with mock.patch(BUILD_FORECAST, forecast_around(problem.u_true.u, 1e-4)):
            result = run_statfem_euclid(config, problem)
        self.assertTrue(result.converged)
        self.assertFalse(result.history.records[0].discovered)
        self.assertEqual(result.model.metadata["source"], "initial")
        self.assertEqual(result.eps_W, 0.0)

    def test_no_model_in_any_iteration(self) -> None:
        config = BenchmarkConfig().with_overrides(["loop.max_iterations=2"])
        problem = prepare_problem(config, u_true=self.problem.u_true)
        zeros = np.zeros(problem.mesh.n_gdof)
        with mock.patch(BUILD_FORECAST, forecast_around(zeros, 0.0)), mock.patch(
            LAMBDA_PATH, return_value=[point(1.0, 1e5, 2)]
        ):
            with self.assertRaises(NoAdmissibleModelError) as context:
                run_statfem_euclid(config, problem)
        self.assertEqual(context.exception.best_rmse, 1e5)


class DiscoverSelectionTest(TestCase):
    problem: Problem

    @classmethod
    def setUpClass(cls) -> None:
        cls.problem = prepare_problem(BenchmarkConfig())

    def state(self, path: List[ParetoPoint]) -> LoopState:
        return LoopState(
            problem=self.problem,
            material=LinearElasticMaterial(1.35, 0.35),
            path=path,
        )

    def test_tau_is_widened_until_a_model_appears(self) -> None:
        state = self.state([point(1.0, 100.0, 2), point(2.0, 300.0, 1)])
        model = Discover()._select(state, 70.0, 1e4)
        assert model is not None
        self.assertEqual(state.tau, 140.0)
        self.assertEqual(model.lambda_star, 1.0)

    def test_widening_stops_at_the_cap(self) -> None:
        # the last doubling is clipped to loop.max_relaxed_tau
        state = self.state([point(1.0, 1500.0, 2)])
        model = Discover()._select(state, 70.0, 1e4)
        assert model is not None
        self.assertEqual(state.tau, 2000.0)

    def test_weak_models_are_never_accepted(self) -> None:
        # 25% of the empty-model residual left unexplained
        state = self.state([point(1.0, 2500.0, 2)])
        self.assertIsNone(Discover()._select(state, 70.0, 1e4))
        self.assertEqual(state.tau, 2000.0)
        config = self.problem.config.with_overrides(["loop.max_relaxed_tau=5000"])
        state.problem = prepare_problem(config, u_true=self.problem.u_true)
        self.assertIsNotNone(Discover()._select(state, 70.0, 1e4))
        self.assertEqual(state.tau, 4480.0)

    def test_relaxation_can_be_disabled(self) -> None:
        config = self.problem.config.with_overrides(["loop.relax_tau=false"])
        state = self.state([point(1.0, 100.0, 2)])
        state.problem = prepare_problem(config, u_true=self.problem.u_true)
        self.assertIsNone(Discover()._select(state, 70.0, 1e4))
        self.assertEqual(state.tau, 70.0)

    def test_no_widening_once_a_model_exists(self) -> None:
        state = self.state([point(1.0, 100.0, 2)])
        state.model = truth_as_model(self.problem.truth)
        self.assertIsNone(Discover()._select(state, 70.0, 1e4))
        self.assertEqual(state.tau, 70.0)

    def test_frozen_discovery_keeps_the_material(self) -> None:
        problem = self.problem
        state = LoopState(problem=problem, material=problem.prior_material())
        with mock.patch(BUILD_FORECAST, forecast_around(problem.u_true.u, 1e-4)):
            state, summary = ForecastStep().run(state, {})
            state, summary = Assimilate().run(state, summary)
        state, _ = Discover(update_model=False).run(state, summary)
        self.assertTrue(state.discovered)
        self.assertIsInstance(state.material, LinearElasticMaterial)


class ForecastStepTest(TestCase):
    problem: Problem

    @classmethod
    def setUpClass(cls) -> None:
        cls.problem = prepare_problem(BenchmarkConfig())

    def test_model_error_widens_the_prior(self) -> None:
        problem = self.problem
        u = problem.u_true.u
        state = LoopState(problem=problem, material=problem.prior_material())
        with mock.patch(BUILD_FORECAST, forecast_around(u, 1e-4)):
            state, summary = ForecastStep().run(state, {})
        assert state.prior is not None and state.forecast is not None
        sigma = 0.05 * np.abs(u).max()
        self.assertAlmostEqual(summary["discrepancy_sigma"], sigma)
        chaos = pce_moments(state.forecast.expansion).cov
        np.testing.assert_allclose(
            state.prior.cov - chaos, sigma ** 2 * problem.unit_discrepancy, atol=1e-15
        )
        np.testing.assert_array_equal(state.prior.mean, u)
        clamped = problem.mesh.dirichlet_dofs
        np.testing.assert_array_equal(state.prior.cov[clamped], chaos[clamped])

    def test_model_error_can_be_switched_off(self) -> None:
        config = self.problem.config.with_overrides(["discrepancy.ratio=0"])
        problem = prepare_problem(config, u_true=self.problem.u_true)
        state = LoopState(problem=problem, material=problem.prior_material())
        with mock.patch(BUILD_FORECAST, forecast_around(problem.u_true.u, 1e-4)):
            state, summary = ForecastStep().run(state, {})
        assert state.prior is not None and state.forecast is not None
        self.assertEqual(summary["discrepancy_sigma"], 0.0)
        np.testing.assert_array_equal(
            state.prior.cov, pce_moments(state.forecast.expansion).cov
        )

    def test_failing_model_reverts_to_the_previous_one(self) -> None:
        problem = self.problem
        prior = problem.prior_material()
        state = LoopState(
            problem=problem,
            material=as_material(neo_hookean()),
            model=truth_as_model(neo_hookean()),
            iteration=2,
            fallback=Fallback(prior, None, float("nan"), float("nan")),
        )
        good = forecast_around(problem.u_true.u, 1e-4)()
        failures = [InvertedElementError("inverted element", 3), good]
        with mock.patch(BUILD_FORECAST, side_effect=failures) as build:
            state, summary = ForecastStep().run(state, {})
        self.assertEqual(build.call_count, 2)
        self.assertIs(build.call_args[0][1], prior)
        self.assertIs(state.material, prior)
        self.assertIsNone(state.model)
        self.assertIsNone(state.fallback)
        self.assertTrue(summary["reverted"])
        self.assertIsNotNone(state.prior)

    def test_failure_without_a_previous_model_propagates(self) -> None:
        state = LoopState(problem=self.problem, material=as_material(neo_hookean()))
        failure = NewtonDivergenceError("no convergence", 1.0)
        with mock.patch(BUILD_FORECAST, side_effect=failure):
            with self.assertRaises(NewtonDivergenceError):
                ForecastStep().run(state, {})


class DiscoverAdoptionTest(TestCase):
    problem: Problem

    @classmethod
    def setUpClass(cls) -> None:
        cls.problem = prepare_problem(
            BenchmarkConfig().with_overrides(["noise.sigma_e=0"])
        )

    def state(self) -> LoopState:
        u = self.problem.u_true.u
        return LoopState(
            problem=self.problem,
            material=self.problem.prior_material(),
            posterior=GaussianField(u, np.zeros((u.size, u.size))),
        )

    def test_adopted_model_remembers_its_predecessor(self) -> None:
        state, _ = Discover().run(self.state(), {})
        self.assertTrue(state.discovered)
        assert state.fallback is not None and state.model is not None
        self.assertIsInstance(state.fallback.material, LinearElasticMaterial)
        self.assertIsNone(state.fallback.model)
        self.assertFalse(as_material(state.material).is_linear)
        np.testing.assert_allclose(state.model.kappa_star, neo_hookean().kappa, atol=1e-3)

    def test_model_that_cannot_carry_the_load_is_not_adopted(self) -> None:
        failed = Evaluation(eps_W=0.5, eps_u=float("nan"), u_disc=None)
        with mock.patch(EVALUATE_MODEL, return_value=failed):
            state, _ = Discover().run(self.state(), {})
        self.assertTrue(state.path)
        self.assertFalse(state.discovered)
        self.assertIsNone(state.model)
        self.assertIsNone(state.fallback)
        self.assertIsInstance(state.material, LinearElasticMaterial)


class UnmockedLoopTest(TestCase):
    """The loop with real chaos forecasts on the benchmark mesh."""

    def test_truth_is_a_fixed_point(self) -> None:
        config = BenchmarkConfig().with_overrides(
            ["noise.sigma_e=0", "loop.start_from_truth=true", "loop.max_iterations=2"]
        )
        result = run_statfem_euclid(config)
        self.assertTrue(result.converged)
        self.assertEqual(result.iterations, 1)
        self.assertLess(result.history.rmse[0], config.tolerance())
        self.assertFalse(result.history.records[0].discovered)
        self.assertEqual(result.model.metadata["source"], "initial")

    def test_full_field_readings_recover_neo_hookean(self) -> None:
        geometry = BenchmarkConfig().geometry
        mesh = build_plate_with_hole(
            geometry.width, geometry.height, geometry.hole_radius, geometry.refinement
        )
        free = np.setdiff1d(np.arange(mesh.n_nodes), mesh.dirichlet_nodes())
        config = BenchmarkConfig(
            sensors=SensorConfig(preset=None, positions=mesh.nodes[free].tolist())
        ).with_overrides(
            ["noise.sigma_e=0", "noise.sigma_floor=1e-6", "loop.max_iterations=4"]
        )
        result = run_statfem_euclid(config)
        names = DEFAULT_LIBRARY.names()
        self.assertTrue(result.converged)
        self.assertTrue(result.history.records[0].discovered)
        self.assertEqual([names[i] for i in result.model.active_set], ["A10", "B1"])
        np.testing.assert_allclose(
            result.model.kappa_star[list(result.model.active_set)], [0.5, 1.5], rtol=2e-2
        )
        self.assertLess(result.eps_W, 1e-2)


@skipUnless(RUN_SLOW, "set HYPERDISC_RUN_SLOW=1 to run the full benchmark loop")
class FullLoopTest(TestCase):
    def test_neo_hookean_dense_layout(self) -> None:
        result = run_statfem_euclid(BenchmarkConfig())
        names = DEFAULT_LIBRARY.names()
        self.assertTrue(result.converged)
        self.assertEqual([names[i] for i in result.model.active_set], ["A10", "B1"])
        np.testing.assert_allclose(
            result.model.kappa_star[list(result.model.active_set)], [0.5, 1.5], rtol=0.1
        )
        self.assertLess(result.eps_W, 1e-2)
        self.assertLess(result.eps_u, 1e-2)

    def test_mooney_rivlin_dense_layout(self) -> None:
        config = BenchmarkConfig().with_overrides(["truth.model=mooney-rivlin"])
        result = run_statfem_euclid(config)
        names = DEFAULT_LIBRARY.names()
        self.assertTrue(result.converged)
        self.assertEqual(
            [names[i] for i in result.model.active_set], ["A10", "A01", "B1"]
        )
        np.testing.assert_allclose(
            result.model.kappa_star[list(result.model.active_set)],
            [0.3, 0.2, 1.5],
            rtol=0.15,
        )
        self.assertLess(result.eps_u, 5e-2)

    def test_medium_layout_with_more_noise_does_not_crash(self) -> None:
        config = BenchmarkConfig().with_overrides(
            ["sensors.preset=medium13", "noise.sigma_e=1e-3"]
        )
        try:
            result = run_statfem_euclid(config)
        except NoAdmissibleModelError:
            return
        self.assertGreaterEqual(result.iterations, 1)
