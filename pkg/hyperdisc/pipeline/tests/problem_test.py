# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

from unittest import mock, TestCase

import numpy as np

from ... import __name__ as client
from ...config import BenchmarkConfig
from ...constitutive import mooney_rivlin, neo_hookean
from ...errors import ConfigError, NewtonDivergenceError
from ...mesh import build_plate_with_hole, place_sensors
from ...solver import DisplacementField
from ..problem import (
    evaluate_model,
    generate_synthetic_data,
    prepare_problem,
    Problem,
)


class SyntheticDataTest(TestCase):
    def setUp(self) -> None:
        self.mesh = build_plate_with_hole(refinement=1)
        self.sensors = place_sensors(self.mesh, [[1.0, 0.5], [0.5, 1.0]])
        self.u_true = DisplacementField(np.arange(self.mesh.n_gdof, dtype=float))

    def generate(self, sigma_e: float, seed: int = 0, n_r: int = 1) -> np.ndarray:
        return generate_synthetic_data(
            neo_hookean(),
            self.mesh,
            self.sensors,
            sigma_e,
            seed,
            n_r,
            u_true=self.u_true,
        ).y

    def test_noiseless_readings_are_exact(self) -> None:
        y = self.generate(0.0)
        self.assertEqual(y.shape, (1, 4))
        np.testing.assert_array_equal(y[0], self.u_true.u[self.sensors.dof_indices])

    def test_noise_statistics(self) -> None:
        y = self.generate(1e-3, n_r=4000)
        noise = y - self.u_true.u[self.sensors.dof_indices]
        self.assertAlmostEqual(float(noise.std()), 1e-3, delta=5e-5)
        self.assertLess(abs(float(noise.mean())), 1e-4)

    def test_seed_reproducibility(self) -> None:
        np.testing.assert_array_equal(self.generate(1e-3, 5), self.generate(1e-3, 5))
        self.assertFalse(np.array_equal(self.generate(1e-3, 5), self.generate(1e-3, 6)))

    def test_negative_noise(self) -> None:
        with self.assertRaises(ConfigError):
            self.generate(-1.0)


class ProblemTest(TestCase):
    problem: Problem

    @classmethod
    def setUpClass(cls) -> None:
        cls.problem = prepare_problem(
            BenchmarkConfig().with_overrides(["noise.n_r=2", "sensors.preset=medium13"])
        )

    def test_layout(self) -> None:
        problem = self.problem
        self.assertEqual(problem.sensors.n_sen, 13)
        self.assertEqual(problem.y.shape, (2, 26))
        observations = problem.observations()
        self.assertEqual(observations.n_r, 2)
        self.assertEqual(observations.H.shape, (26, problem.mesh.n_gdof))
        self.assertEqual(observations.sigma_e, 1e-4)
        self.assertEqual(problem.truth, neo_hookean())
        self.assertEqual(problem.prior_material().nu, 0.35)

    def test_same_seed_same_data(self) -> None:
        again = prepare_problem(self.problem.config, u_true=self.problem.u_true)
        np.testing.assert_array_equal(again.y, self.problem.y)

    def test_evaluate_truth(self) -> None:
        evaluation = evaluate_model(self.problem, neo_hookean())
        self.assertEqual(evaluation.eps_W, 0.0)
        self.assertEqual(evaluation.eps_u, 0.0)
        other = evaluate_model(self.problem, mooney_rivlin())
        self.assertGreater(other.eps_W, 0.0)
        self.assertGreater(other.eps_u, 0.0)

    def test_failed_forward_solve(self) -> None:
        with mock.patch(
            f"{client}.pipeline.problem.solve_forward",
            side_effect=NewtonDivergenceError("diverged", 1.0),
        ):
            evaluation = evaluate_model(self.problem, mooney_rivlin())
        self.assertTrue(np.isnan(evaluation.eps_u))
        self.assertIsNone(evaluation.u_disc)
