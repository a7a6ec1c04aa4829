# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

from typing import Tuple
from unittest import TestCase

import numpy as np

from ..constitutive import (
    DEFAULT_LIBRARY,
    FeatureLibrary,
    MaterialParams,
    mooney_rivlin,
    neo_hookean,
)
from ..errors import ConfigError, NoAdmissibleModelError
from ..euclid import (
    assemble_feature_matrix,
    constraint_vector,
    discover,
    DiscoveredModel,
    EuclidSettings,
    kkt_residual,
    lambda_path,
    normalize,
    pareto_to_frame,
    ParetoPoint,
    residual_rmse,
    select_model,
    select_widening,
    solve_constrained_lasso,
)
from ..mesh import build_plate_with_hole
from ..solver import (
    external_force,
    internal_force,
    LoadCase,
    solve_forward,
    SolverSettings,
)


def synthetic_regression(seed: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((60, DEFAULT_LIBRARY.n_phi))
    kappa = neo_hookean().kappa
    return A, A @ kappa, kappa


def point(lam: float, rmse: float, n_active: int) -> ParetoPoint:
    kappa = np.zeros(DEFAULT_LIBRARY.n_phi)
    kappa[:n_active] = 1.0
    return ParetoPoint(lam, kappa, rmse, float(n_active), n_active)


class FeatureMatrixTest(TestCase):
    def test_weak_form_is_linear_in_the_coefficients(self) -> None:
        mesh = build_plate_with_hole(refinement=1)
        u = 0.002 * np.random.default_rng(4).standard_normal(mesh.n_gdof)
        features = assemble_feature_matrix(mesh, u)
        self.assertEqual(features.A.shape, (mesh.n_gdof, DEFAULT_LIBRARY.n_phi))
        self.assertEqual(features.free.shape[0], mesh.free_dofs.size)
        for params in (neo_hookean(), mooney_rivlin()):
            expected = internal_force(mesh, u, params)
            np.testing.assert_allclose(
                features.force(params), expected, atol=1e-10 * np.abs(expected).max()
            )

    def test_undeformed_state_has_no_force(self) -> None:
        mesh = build_plate_with_hole(refinement=1)
        features = assemble_feature_matrix(mesh, np.zeros(mesh.n_gdof))
        np.testing.assert_allclose(features.A, 0.0, atol=1e-14)


class NormalizeTest(TestCase):
    def test_empty_model_hits_reference(self) -> None:
        A, p, _ = synthetic_regression()
        problem = normalize(A, p, 1e4)
        self.assertAlmostEqual(
            residual_rmse(problem.A, problem.p, np.zeros(A.shape[1])), 1e4, places=6
        )
        np.testing.assert_allclose(problem.A, problem.scale * A)

    def test_zero_force_is_rejected(self) -> None:
        with self.assertRaises(ConfigError):
            normalize(np.ones((3, 2)), np.zeros(3), 1e4)

    def test_constraint_vector(self) -> None:
        c = constraint_vector(DEFAULT_LIBRARY, 3.0)
        self.assertEqual(c.tolist(), [3.0] * 9 + [-1.0])
        self.assertIsNone(constraint_vector(DEFAULT_LIBRARY, None))
        # neo-Hookean and Mooney-Rivlin ground truths satisfy the constraint
        self.assertAlmostEqual(float(c @ neo_hookean().kappa), 0.0)
        self.assertAlmostEqual(float(c @ mooney_rivlin().kappa), 0.0)


class LassoTest(TestCase):
    def test_small_lambda_recovers_the_sparse_truth(self) -> None:
        A, p, kappa = synthetic_regression()
        solution = solve_constrained_lasso(A, p, 1e-8)
        np.testing.assert_allclose(solution, kappa, atol=1e-6)
        c = constraint_vector(DEFAULT_LIBRARY, 3.0)
        self.assertLess(kkt_residual(A, p, 1e-8, solution, c), 1e-6)

    def test_large_lambda_gives_the_empty_model(self) -> None:
        A, p, _ = synthetic_regression()
        solution = solve_constrained_lasso(A, p, 1e12)
        np.testing.assert_array_equal(solution, 0.0)

    def test_non_negative_and_feasible(self) -> None:
        rng = np.random.default_rng(9)
        A = rng.standard_normal((40, DEFAULT_LIBRARY.n_phi))
        p = rng.standard_normal(40)
        c = constraint_vector(DEFAULT_LIBRARY, 3.0)
        for lam in (1e-3, 1.0, 10.0):
            solution = solve_constrained_lasso(A, p, lam)
            self.assertTrue((solution >= 0.0).all())
            self.assertLess(abs(c @ solution), 1e-10 * max(solution.sum(), 1.0))
            self.assertLess(kkt_residual(A, p, lam, solution, c), 1e-6)

    def test_unconstrained_variant(self) -> None:
        A, p, kappa = synthetic_regression(1)
        solution = solve_constrained_lasso(A, p, 1e-8, r=None)
        np.testing.assert_allclose(solution, kappa, atol=1e-6)

    def test_warm_and_cold_start_agree(self) -> None:
        A, p, _ = synthetic_regression(2)
        p = p + 0.1 * np.random.default_rng(3).standard_normal(p.size)
        cold = solve_constrained_lasso(A, p, 5.0)
        start = solve_constrained_lasso(A, p, 1.0)
        warm = solve_constrained_lasso(A, p, 5.0, kappa0=start)
        np.testing.assert_allclose(warm, cold, atol=1e-8)

    def test_warm_and_cold_paths_agree_at_random_lambdas(self) -> None:
        A, p, _ = synthetic_regression(7)
        p = p + 0.1 * np.random.default_rng(8).standard_normal(p.size)
        lambdas = np.sort(10.0 ** np.random.default_rng(11).uniform(-3.0, 3.0, 10))
        warm = lambda_path(A, p, EuclidSettings(warm_start=True), lambdas=lambdas)
        cold = lambda_path(A, p, EuclidSettings(warm_start=False), lambdas=lambdas)
        self.assertEqual(len(warm), 10)
        for w, c in zip(warm, cold):
            self.assertEqual(w.lam, c.lam)
            np.testing.assert_allclose(w.kappa, c.kappa, atol=1e-7)

    def test_invalid_arguments(self) -> None:
        A, p, _ = synthetic_regression()
        with self.assertRaises(ConfigError):
            solve_constrained_lasso(A, p, -1.0)
        with self.assertRaises(ConfigError):
            solve_constrained_lasso(A[:, :4], p, 1.0)


class PathTest(TestCase):
    def test_path_is_monotone(self) -> None:
        A, p, _ = synthetic_regression(5)
        p = p + 0.05 * np.random.default_rng(6).standard_normal(p.size)
        settings = EuclidSettings(lambda_min=1e-3, lambda_max=1e4, n_lambda=60)
        path = lambda_path(A, p, settings)
        self.assertEqual(len(path), 60)
        l1 = np.array([entry.l1_norm for entry in path])
        rmse = np.array([entry.rmse for entry in path])
        self.assertTrue((np.diff(l1) <= 1e-8).all())
        self.assertTrue((np.diff(rmse) >= -1e-8).all())
        self.assertEqual(path[-1].n_active, 0)
        c = constraint_vector(DEFAULT_LIBRARY, 3.0)
        for entry in path:
            self.assertLess(abs(c @ entry.kappa), 1e-8 * max(entry.l1_norm, 1.0))

    def test_pareto_frame(self) -> None:
        A, p, _ = synthetic_regression()
        path = lambda_path(A, p, EuclidSettings(n_lambda=5))
        frame = pareto_to_frame(path, DEFAULT_LIBRARY)
        self.assertEqual(len(frame), 5)
        self.assertEqual(
            list(frame.columns),
            ["lambda", "rmse", "l1_norm", "n_active"] + DEFAULT_LIBRARY.names(),
        )

    def test_settings_validation(self) -> None:
        with self.assertRaises(ConfigError):
            EuclidSettings(lambda_min=10.0, lambda_max=1.0)
        with self.assertRaises(ConfigError):
            EuclidSettings(r=0.0)
        with self.assertRaises(ConfigError):
            EuclidSettings(n_lambda=1)
        self.assertEqual(EuclidSettings(n_mr=2, n_vol=2).library, FeatureLibrary(2, 2))


class SelectModelTest(TestCase):
    def test_sparsest_then_lowest_rmse_then_largest_lambda(self) -> None:
        path = [
            point(1.0, 10.0, 2),
            point(2.0, 50.0, 1),
            point(3.0, 50.0, 1),
            point(4.0, 60.0, 1),
            point(5.0, 80.0, 1),
            point(6.0, 1e4, 0),
        ]
        model = select_model(path, 70.0)
        self.assertEqual(model.lambda_star, 3.0)
        self.assertEqual(model.active_set, (0,))
        self.assertEqual(model.rmse_star, 50.0)
        self.assertEqual(len(model.pareto_path), 6)

    def test_empty_model_is_never_admissible(self) -> None:
        with self.assertRaises(NoAdmissibleModelError) as context:
            select_model([point(1.0, 90.0, 2), point(2.0, 0.0, 0)], 70.0)
        self.assertEqual(context.exception.best_rmse, 0.0)

    def test_no_admissible_model(self) -> None:
        with self.assertRaises(NoAdmissibleModelError) as context:
            select_model([point(1.0, 90.0, 2), point(2.0, 100.0, 1)], 70.0)
        self.assertEqual(context.exception.best_rmse, 90.0)

    def test_widening_doubles_tau_and_clips_at_the_limit(self) -> None:
        path = [point(1.0, 250.0, 2), point(2.0, 1e4, 0)]
        model, tau = select_widening(path, 70.0, 1e4)
        self.assertEqual(tau, 280.0)
        self.assertEqual(model.lambda_star, 1.0)
        model, tau = select_widening([point(1.0, 9e3, 1)], 70.0, 1e4)
        self.assertEqual(tau, 1e4)
        with self.assertRaises(NoAdmissibleModelError):
            select_widening([point(1.0, 250.0, 2)], 70.0, 200.0)
        with self.assertRaises(NoAdmissibleModelError):
            select_widening([point(1.0, 250.0, 2)], 70.0, 70.0)


class FullFieldDiscoveryTest(TestCase):
    """Noiseless full-field data through the default 1000-point lambda path."""

    def discover_from(self, truth: MaterialParams) -> DiscoveredModel:
        mesh = build_plate_with_hole(refinement=1)
        load = LoadCase()
        field = solve_forward(mesh, truth, load, SolverSettings(newton_tol=1e-12))
        features = assemble_feature_matrix(mesh, field.u)
        p = external_force(mesh, load)[features.free_rows]
        model = discover(features.free, p, EuclidSettings())
        self.assertEqual(len(model.pareto_path), 1000)
        self.assertLess(model.rmse_star, 70.0)
        self.assertEqual(model.metadata["n_rows"], mesh.free_dofs.size)
        return model

    def assert_recovers(self, truth: MaterialParams, rtol: float) -> None:
        model = self.discover_from(truth)
        names = DEFAULT_LIBRARY.names()
        active = list(truth.active_set())
        self.assertEqual(
            sorted(names[i] for i in model.active_set), sorted(names[i] for i in active)
        )
        np.testing.assert_allclose(
            model.kappa_star[active], truth.kappa[active], rtol=rtol
        )

    def test_neo_hookean_from_noiseless_field(self) -> None:
        self.assert_recovers(neo_hookean(), 1e-2)

    def test_mooney_rivlin_from_noiseless_field(self) -> None:
        self.assert_recovers(mooney_rivlin(), 2e-2)
