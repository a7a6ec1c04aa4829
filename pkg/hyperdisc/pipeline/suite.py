# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Noise level x sensor layout grid for both discovery methods."""

import dataclasses
import logging
from multiprocessing import Pool
from typing import Any, Dict, List, Sequence, Tuple

import pandas as pd

from ..config import BenchmarkConfig, SensorConfig
from ..decorators import log_time
from ..errors import ConfigError, DiscoveryError
from .baseline import run_problem_baseline
from .loop import run_statfem_euclid
from .problem import prepare_problem

log: logging.Logger = logging.getLogger("hyperdisc")

METHODS = ("euclid", "statfem-euclid")
DEFAULT_SIGMAS = (1e-3, 1e-4)
DEFAULT_PRESETS = ("sparse3", "medium13", "dense38")

Row = Dict[str, Any]


def _run_case(args: Tuple[BenchmarkConfig, str]) -> Row:
    config, method = args
    row: Row = {
        "truth": config.truth.model,
        "method": method,
        "n_sen": None,
        "sigma_e": config.noise.sigma_e,
        "status": "",
        "model": "--",
        "n_active": None,
        "eps_W": float("nan"),
        "eps_u": float("nan"),
        "iterations": None,
    }
    try:
        problem = prepare_problem(config)
        row["n_sen"] = problem.sensors.n_sen
        if method == "euclid":
            result = run_problem_baseline(problem)
            row["status"] = result.status.value
            if result.model is not None:
                row.update(
                    model=result.model.expression(),
                    n_active=len(result.model.active_set),
                    eps_W=result.eps_W,
                    eps_u=result.eps_u,
                )
        else:
            loop = run_statfem_euclid(config, problem, jobs=1)
            row.update(
                status="converged" if loop.converged else "not converged",
                model=loop.model.expression(),
                n_active=len(loop.model.active_set),
                eps_W=loop.eps_W,
                eps_u=loop.eps_u,
                iterations=loop.iterations,
            )
    except DiscoveryError as error:
        row["status"] = f"failed: {error}"
    return row


def suite_configs(
    base_config: BenchmarkConfig,
    sigmas: Sequence[float] = DEFAULT_SIGMAS,
    presets: Sequence[str] = DEFAULT_PRESETS,
    methods: Sequence[str] = METHODS,
) -> List[Tuple[BenchmarkConfig, str]]:
    unknown = [method for method in methods if method not in METHODS]
    if unknown:
        raise ConfigError(
            f"unknown method(s) {', '.join(unknown)}; expected {', '.join(METHODS)}"
        )
    cases = []
    for method in methods:
        for sigma in sigmas:
            for preset in presets:
                config = base_config.replace(
                    sensors=SensorConfig(preset=preset),
                    noise=dataclasses.replace(base_config.noise, sigma_e=float(sigma)),
                    jobs=1,
                )
                cases.append((config, method))
    return cases


@log_time
def run_benchmark_suite(
    base_config: BenchmarkConfig,
    sigmas: Sequence[float] = DEFAULT_SIGMAS,
    presets: Sequence[str] = DEFAULT_PRESETS,
    methods: Sequence[str] = METHODS,
    jobs: int = 1,
) -> pd.DataFrame:
    """One row per (method, sigma_e, layout), in table order.

    Cases are independent; with ``jobs > 1`` they run in a process pool.
    """
    cases = suite_configs(base_config, sigmas, presets, methods)
    rows: List[Row] = []
    if jobs <= 1:
        rows = [_run_case(case) for case in cases]
    else:
        with Pool(processes=jobs) as pool:
            for idx, row in enumerate(pool.imap(_run_case, cases)):
                log.info(f"{idx + 1}/{len(cases)} benchmark cases finished")
                rows.append(row)
    return pd.DataFrame(rows)
