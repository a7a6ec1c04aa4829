# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

import json
import os
import tempfile
from pathlib import Path
from unittest import TestCase

import numpy as np

from ..config import BenchmarkConfig
from ..errors import ConfigError

CONFIG_DIRECTORY = Path(__file__).resolve().parents[2] / "configs"


class BenchmarkConfigTest(TestCase):
    def test_defaults(self) -> None:
        config = BenchmarkConfig()
        self.assertEqual(config.truth.model, "neo-hookean")
        self.assertEqual(config.sensors.label, "dense38")
        self.assertEqual(config.euclid.tau, 70.0)
        self.assertEqual(config.euclid.r, 3.0)
        self.assertEqual(config.pce.random_field(config.load).sigma_t, (0.025, 0.0))
        self.assertAlmostEqual(config.tolerance(), 1.05e-4 * np.sqrt(2.0))
        self.assertEqual(config.loop.max_relaxed_tau, 0.2 * config.euclid.reference_rmse)
        self.assertAlmostEqual(config.discrepancy.sigma(np.array([0.1, -0.4])), 0.02)

    def test_round_trip(self) -> None:
        config = BenchmarkConfig().with_overrides(["truth.model=mooney-rivlin"])
        restored = BenchmarkConfig.from_dict(json.loads(config.to_json()))
        self.assertEqual(restored, config)

    def test_shipped_configurations_load(self) -> None:
        for name in ("benchmark_nh.json", "benchmark_mr.json"):
            config = BenchmarkConfig.from_file(CONFIG_DIRECTORY / name)
            self.assertIn(config.truth.model, ("neo-hookean", "mooney-rivlin"))
            self.assertEqual(config.discrepancy, BenchmarkConfig().discrepancy)
            self.assertEqual(config.loop, BenchmarkConfig().loop)

    def test_unknown_keys(self) -> None:
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"geometry": {"radius": 0.2}})
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"plate": {}})
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"seed": "7"})

    def test_invalid_values(self) -> None:
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"prior": {"nu": 0.7}})
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"noise": {"sigma_e": -1.0}})
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"discrepancy": {"length": 0.0}})
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"loop": {"max_relaxed_tau": -5.0}})
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"sensors": {"preset": "dense99"}})
        with self.assertRaises(ConfigError):
            BenchmarkConfig.from_dict({"euclid": {"n_mr": 9}})

    def test_overrides(self) -> None:
        config = BenchmarkConfig().with_overrides(
            ["noise.sigma_e=1e-3", "sensors.preset=sparse3", "loop.freeze=true"]
        )
        self.assertEqual(config.noise.sigma_e, 1e-3)
        self.assertEqual(config.sensors.preset, "sparse3")
        self.assertTrue(config.loop.freeze)
        with self.assertRaises(ConfigError):
            BenchmarkConfig().with_overrides(["noise.sigma=1"])
        with self.assertRaises(ConfigError):
            BenchmarkConfig().with_overrides(["noise.sigma_e"])

    def test_fingerprint_ignores_jobs(self) -> None:
        config = BenchmarkConfig()
        self.assertEqual(config.fingerprint(), config.replace(jobs=8).fingerprint())
        self.assertNotEqual(config.fingerprint(), config.replace(seed=1).fingerprint())

    def test_rngs_are_reproducible(self) -> None:
        first_noise, first_pce = BenchmarkConfig(seed=3).rngs()
        second_noise, second_pce = BenchmarkConfig(seed=3).rngs()
        np.testing.assert_array_equal(first_noise.random(4), second_noise.random(4))
        np.testing.assert_array_equal(first_pce.random(4), second_pce.random(4))
        noise, pce = BenchmarkConfig(seed=3).rngs()
        self.assertFalse(np.array_equal(noise.random(4), pce.random(4)))

    def test_tolerance_override(self) -> None:
        config = BenchmarkConfig().with_overrides(["loop.tol=0.5"])
        self.assertEqual(config.tolerance(), 0.5)
        noiseless = BenchmarkConfig().with_overrides(["noise.sigma_e=0"])
        self.assertAlmostEqual(noiseless.tolerance(), 1.05e-8 * np.sqrt(2.0))
        floored = noiseless.with_overrides(["loop.tol_floor=1e-6"])
        self.assertEqual(floored.tolerance(), 1e-6)
        with self.assertRaises(ConfigError):
            BenchmarkConfig().with_overrides(["loop.tol_floor=-1"])
        self.assertEqual(noiseless.noise.likelihood_sigma, 1e-8)

    def test_invalid_json(self) -> None:
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "broken.json")
            Path(path).write_text("{not json")
            with self.assertRaises(ConfigError):
                BenchmarkConfig.from_file(path)
