# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

import logging
from functools import wraps
from typing import Any, Callable, Dict, List, Optional, Tuple

import click
import click_log
import numpy as np
import pandas as pd
from click import option

from .constitutive import as_material, MaterialParams
from .context import Context, pass_context
from .decorators import catch_keyboard_interrupt, exit_on_discovery_error
from .euclid import pareto_to_frame
from .errors import DiscoveryError, NO_ADMISSIBLE_MODEL, NUMERICAL_ERROR
from .io import read_model, RunDirectory
from .metrics import (
    energy_curve,
    error_eps_u,
    error_eps_W,
    invariant_energy_curves,
    pointwise_errors,
    pointwise_frame,
    von_mises_field,
)
from .pipeline.baseline import BaselineStatus, run_problem_baseline
from .pipeline.loop import run_statfem_euclid
from .pipeline.problem import evaluate_model, prepare_problem, Problem
from .pipeline.suite import DEFAULT_PRESETS, DEFAULT_SIGMAS, METHODS, run_benchmark_suite
from .solver import AnyMaterial, DisplacementField, solve_with_retries

logger: logging.Logger = logging.getLogger("hyperdisc")


def common_options(func):
    @click.group(context_settings={"help_option_names": ["--help", "-h"]})
    @click_log.simple_verbosity_option(logger)
    @option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        help="JSON benchmark configuration (defaults apply when omitted)",
    )
    @option(
        "--out",
        default="results",
        type=click.Path(file_okay=False),
        help="Output directory",
    )
    @option("--seed", type=int, help="Master seed, overrides the configuration")
    @option("--jobs", type=click.IntRange(min=1), help="Worker processes")
    @option(
        "--set",
        "overrides",
        multiple=True,
        metavar="KEY=VALUE",
        help="Override a configuration entry, e.g. noise.sigma_e=1e-3",
    )
    @wraps(func)
    def wrapper(*args, **kwargs):
        return func(*args, **kwargs)

    return wrapper


def field_frame(
    problem: Problem, field: DisplacementField, material: AnyMaterial
) -> pd.DataFrame:
    frame = field.to_frame(problem.mesh)
    frame["von_mises"] = von_mises_field(problem.mesh, field.u, material)
    return frame


def _echo_row(row: Dict[str, Any]) -> None:
    click.echo(
        "  ".join(
            f"{key}={value:.3e}" if isinstance(value, float) else f"{key}={value}"
            for key, value in row.items()
        )
    )


def _write_discovered_fields(
    run: RunDirectory, problem: Problem, params: MaterialParams
) -> Tuple[float, float]:
    evaluation = evaluate_model(problem, params)
    if evaluation.u_disc is not None:
        run.write_frame(
            "fields_discovered.csv", field_frame(problem, evaluation.u_disc, params)
        )
        errors = pointwise_errors(
            problem.mesh,
            evaluation.u_disc.u,
            problem.u_true.u,
            params,
            problem.truth,
        )
        run.write_frame("fields_errors.csv", pointwise_frame(problem.mesh, errors))
    return evaluation.eps_W, evaluation.eps_u


@click.command(help="solve the forward problem and write displacement and stress fields")
@option(
    "--material",
    type=click.Choice(["truth", "prior"]),
    default="truth",
    help="ground-truth hyperelastic model or the linear elastic prior",
)
@option(
    "--model",
    "model_path",
    type=click.Path(exists=True, dir_okay=False),
    help="coefficient file to solve with instead",
)
@pass_context
def forward(ctx: Context, material: str, model_path: Optional[str]) -> None:
    config = ctx.config
    with exit_on_discovery_error():
        problem = prepare_problem(config)
        chosen: AnyMaterial
        if model_path is not None:
            chosen = read_model(model_path)
        elif material == "prior":
            chosen = problem.prior_material()
        else:
            chosen = problem.truth
        field = (
            problem.u_true
            if chosen is problem.truth
            else solve_with_retries(problem.mesh, chosen, problem.load, config.solver)
        )
        run = RunDirectory(ctx.out)
        run.write_config(config)
        run.write_frame("fields_forward.csv", field_frame(problem, field, chosen))
        run.write_json("mesh.json", problem.mesh.to_json())
    click.echo(f"{as_material(chosen).describe()}: max |u| = {field.magnitude().max():.6e}")


@click.command(name="generate-data", help="write noisy synthetic sensor readings")
@pass_context
def generate_data(ctx: Context) -> None:
    with exit_on_discovery_error():
        problem = prepare_problem(ctx.config)
        run = RunDirectory(ctx.out)
        run.write_config(ctx.config)
        run.write_readings(problem.y, problem.sensors, problem.mesh)
        run.write_frame(
            "fields_truth.csv", field_frame(problem, problem.u_true, problem.truth)
        )
    click.echo(
        f"{problem.sensors.n_gsen} observations from {problem.sensors.n_sen} sensors"
    )


def _discover_baseline(run: RunDirectory, problem: Problem) -> Dict[str, Any]:
    result = run_problem_baseline(problem)
    if result.status == BaselineStatus.NUMERICAL_FAILURE:
        raise DiscoveryError(result.message, NUMERICAL_ERROR)
    if result.model is None:
        raise DiscoveryError(
            f"EUCLID baseline: {result.status.value}: {result.message}",
            NO_ADMISSIBLE_MODEL,
        )
    run.write_model(result.model, "euclid")
    run.write_frame(
        "pareto_iter1.csv",
        pareto_to_frame(result.model.pareto_path, result.model.library),
    )
    return {
        "method": "euclid",
        "model": result.model,
        "eps_W": result.eps_W,
        "eps_u": result.eps_u,
        "iterations": None,
        "converged": None,
        "rmse_u": [],
    }


def _discover_statfem(run: RunDirectory, problem: Problem, jobs: int) -> Dict[str, Any]:
    result = run_statfem_euclid(problem.config, problem, jobs)
    run.write_history(result.history, problem.config.euclid.library)
    run.write_model(result.model, "statfem-euclid")
    posterior = pd.DataFrame(
        {
            "node": np.arange(problem.mesh.n_nodes),
            "x": problem.mesh.nodes[:, 0],
            "y": problem.mesh.nodes[:, 1],
            "ux": result.posterior.mean[0::2],
            "uy": result.posterior.mean[1::2],
            "std_ux": result.posterior.std()[0::2],
            "std_uy": result.posterior.std()[1::2],
        }
    )
    run.write_frame("fields_posterior.csv", posterior)
    return {
        "method": "statfem-euclid",
        "model": result.model,
        "eps_W": result.eps_W,
        "eps_u": result.eps_u,
        "iterations": result.iterations,
        "converged": result.converged,
        "rmse_u": result.history.rmse,
    }


@click.command(help="discover a strain energy from the sensor readings")
@option(
    "--mode",
    type=click.Choice(METHODS),
    default="statfem-euclid",
    help="regression on the raw readings or on the assimilated field",
)
@pass_context
def discover(ctx: Context, mode: str) -> None:
    config = ctx.config
    with exit_on_discovery_error():
        problem = prepare_problem(config)
        run = RunDirectory(ctx.out)
        fingerprint = run.write_config(config)
        if mode == "euclid":
            outcome = _discover_baseline(run, problem)
        else:
            outcome = _discover_statfem(run, problem, ctx.jobs)
        model = outcome.pop("model")
        _write_discovered_fields(run, problem, model.params)
        run.write_metrics(
            {
                **outcome,
                "fingerprint": fingerprint,
                "truth": config.truth.model,
                "n_sen": problem.sensors.n_sen,
                "sigma_e": config.noise.sigma_e,
                "expression": model.expression(),
                "n_active": len(model.active_set),
            }
        )
    click.echo(f"W = {model.expression()}")
    _echo_row(
        {
            "method": mode,
            "truth": config.truth.model,
            "n_sen": problem.sensors.n_sen,
            "sigma_e": config.noise.sigma_e,
            "eps_W": outcome["eps_W"],
            "eps_u": outcome["eps_u"],
        }
    )


@click.command(
    name="benchmark-suite", help="run the noise level x sensor layout table for both methods"
)
@option("--sigma", "sigmas", type=float, multiple=True, help="noise levels")
@option("--preset", "presets", multiple=True, help="sensor layouts")
@option("--method", "methods", type=click.Choice(METHODS), multiple=True)
@pass_context
def benchmark_suite(
    ctx: Context,
    sigmas: Tuple[float, ...],
    presets: Tuple[str, ...],
    methods: Tuple[str, ...],
) -> None:
    with catch_keyboard_interrupt(), exit_on_discovery_error():
        table = run_benchmark_suite(
            ctx.config,
            sigmas or DEFAULT_SIGMAS,
            presets or DEFAULT_PRESETS,
            methods or METHODS,
            ctx.jobs,
        )
        run = RunDirectory(ctx.out)
        run.write_config(ctx.config)
        run.write_frame("suite.csv", table)
        click.echo(table.to_string(index=False))


@click.command(help="score a model file against the ground truth")
@option(
    "--model",
    "model_path",
    required=True,
    type=click.Path(exists=True, dir_okay=False),
    help="discovered_model.json or a coefficient file",
)
@option(
    "--eta",
    "etas",
    type=float,
    multiple=True,
    help="load scales of the energy curve (default 0.1 ... 1.0)",
)
@pass_context
def metrics(ctx: Context, model_path: str, etas: Tuple[float, ...]) -> None:
    config = ctx.config
    with exit_on_discovery_error():
        params = read_model(model_path)
        problem = prepare_problem(config)
        run = RunDirectory(ctx.out)
        fingerprint = run.write_config(config)
        energy = error_eps_W(problem.truth, params, problem.ranges)
        u_disc = solve_with_retries(problem.mesh, params, problem.load, config.solver)
        eps_u = error_eps_u(u_disc.u, problem.u_true.u)
        errors = pointwise_errors(
            problem.mesh, u_disc.u, problem.u_true.u, params, problem.truth
        )
        run.write_frame("fields_errors.csv", pointwise_frame(problem.mesh, errors))
        curve = energy_curve(
            problem.mesh,
            [("truth", problem.truth), ("model", params)],
            problem.load,
            etas or np.linspace(0.1, 1.0, 10),
            settings=config.solver,
        )
        run.write_frame("energy_curve.csv", curve)
        invariants = invariant_energy_curves(
            problem.mesh,
            [("truth", problem.truth), ("model", params)],
            problem.truth,
            problem.load,
            etas or np.linspace(0.1, 1.0, 10),
            settings=config.solver,
        )
        run.write_frame("energy_invariants.csv", invariants)
        row = {
            "eps_W": energy.value,
            "eps_W_excluded": energy.excluded_fraction,
            "eps_u": eps_u,
            "max_displacement_error": float(errors.displacement.max()),
            "max_von_mises_error": float(errors.von_mises.max()),
        }
        run.write_metrics(
            {**row, "fingerprint": fingerprint, "expression": params.expression()}
        )
    click.echo(f"W = {params.expression()}")
    _echo_row(row)


commands: List[Callable[[], None]] = [
    forward,
    generate_data,
    discover,
    benchmark_suite,
    metrics,
]
