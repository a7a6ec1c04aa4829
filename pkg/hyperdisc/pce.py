# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Non-intrusive Hermite chaos surrogate of the displacement under a random
traction ``t(xi) = mu_t + sigma_t * xi`` with ``xi ~ N(0, 1)``.

Probabilists' Hermite polynomials are used throughout, so ``<He_j^2> = j!``.
"""

import json
import logging
import math
from dataclasses import dataclass
from multiprocessing import Pool
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermevander
from scipy.stats import norm

from .errors import ConfigError, RankDeficientError
from .mesh import Mesh
from .solver import AnyMaterial, LoadCase, solve_with_retries, SolverSettings
from .statfem import GaussianField

log: logging.Logger = logging.getLogger("hyperdisc")

MANIFEST_FILE = "pce.json"


@dataclass(frozen=True)
class TractionRandomField:
    mu_t: Tuple[float, float] = (0.5, 0.0)
    sigma_t: Tuple[float, float] = (0.025, 0.0)

    def __post_init__(self) -> None:
        if min(self.sigma_t) < 0.0:
            raise ConfigError(f"traction standard deviation must be >= 0, got {self.sigma_t}")


def sample_traction(field: TractionRandomField, xi: Union[float, np.ndarray]) -> np.ndarray:
    """Traction at the standard-normal draw(s) ``xi``; shape (..., 2)."""
    xi = np.asarray(xi, dtype=float)
    return np.asarray(field.mu_t) + np.asarray(field.sigma_t) * xi[..., None]


@dataclass(frozen=True)
class PCESettings:
    order: int = 3
    n_samples: int = 20
    # randomize the position inside each probability stratum
    jitter: bool = False
    # extra forward solves to validate the surrogate against
    holdout: int = 0

    def __post_init__(self) -> None:
        if self.order < 0:
            raise ConfigError(f"PCE order must be >= 0, got {self.order}")
        if self.n_samples < self.order + 1:
            raise ConfigError(
                f"{self.n_samples} samples cannot fit a PCE of order {self.order}"
            )


@dataclass(frozen=True, eq=False)
class PCExpansion:
    # coeffs[j]: coefficient vector of He_j, shape (order + 1, n_gdof)
    coeffs: np.ndarray
    normal_residual: float = 0.0

    @property
    def order(self) -> int:
        return int(self.coeffs.shape[0]) - 1

    @property
    def mean(self) -> np.ndarray:
        return self.coeffs[0]

    def save(self, directory: Union[str, Path]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for j, coefficient in enumerate(self.coeffs):
            name = f"u_{j}.csv"
            pd.DataFrame({"dof": np.arange(coefficient.size), "value": coefficient}).to_csv(
                directory / name, index=False, float_format="%.17g"
            )
            files.append(name)
        manifest = {
            "basis": "probabilists-hermite",
            "order": self.order,
            "n_gdof": int(self.coeffs.shape[1]),
            "normal_residual": self.normal_residual,
            "coefficients": files,
        }
        (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2))

    @staticmethod
    def load(directory: Union[str, Path]) -> "PCExpansion":
        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST_FILE).read_text())
        coeffs = np.stack(
            [
                pd.read_csv(directory / name).sort_values("dof")["value"].to_numpy(float)
                for name in manifest["coefficients"]
            ]
        )
        return PCExpansion(coeffs, float(manifest.get("normal_residual", 0.0)))


def stratified_normal_nodes(
    n_samples: int, rng: Optional[np.random.Generator] = None
) -> np.ndarray:
    """One standard-normal node per equal-probability stratum.

    Without ``rng`` the stratum midpoints are used; with it, the position
    inside every stratum is drawn uniformly.
    """
    offsets = np.full(n_samples, 0.5) if rng is None else rng.uniform(0.0, 1.0, n_samples)
    return norm.ppf((np.arange(n_samples) + offsets) / n_samples)


def fit_pce(samples: Sequence[Tuple[float, np.ndarray]], order: int) -> PCExpansion:
    """Least-squares fit of Hermite chaos coefficients to (xi, u(xi)) pairs."""
    xi = np.array([sample[0] for sample in samples], dtype=float)
    U = np.stack([np.asarray(sample[1], dtype=float) for sample in samples])
    if np.unique(xi).size < xi.size:
        raise RankDeficientError("duplicate xi values in the PCE samples")
    if xi.size < order + 1:
        raise RankDeficientError(
            f"{xi.size} samples cannot determine {order + 1} PCE coefficients"
        )
    design = hermevander(xi, order)
    coeffs, _, rank, _ = np.linalg.lstsq(design, U, rcond=None)
    if rank < order + 1:
        raise RankDeficientError(f"PCE design matrix has rank {rank} < {order + 1}")
    gradient = design.T @ (design @ coeffs - U)
    scale = max(float(np.linalg.norm(design.T @ U)), np.finfo(float).tiny)
    return PCExpansion(coeffs, float(np.linalg.norm(gradient) / scale))


def evaluate_pce(expansion: PCExpansion, xi: Union[float, np.ndarray]) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return hermevander(xi, expansion.order) @ expansion.coeffs


def hermite_norms(order: int) -> np.ndarray:
    return np.array([math.factorial(j) for j in range(order + 1)], dtype=float)


def pce_moments(expansion: PCExpansion) -> GaussianField:
    """Mean u_0 and covariance sum_{j>=1} j! u_j u_j^T."""
    weights = hermite_norms(expansion.order)[1:]
    tail = expansion.coeffs[1:]
    cov = np.einsum("j,ja,jb->ab", weights, tail, tail)
    return GaussianField(expansion.mean.copy(), cov)


class Forecast(NamedTuple):
    expansion: PCExpansion
    nodes: np.ndarray
    # max relative hold-out error, None without hold-out solves
    holdout_error: Optional[float]


# Called once per worker process; arguments and result must pickle.
def _solve_sample(
    args: Tuple[Mesh, AnyMaterial, LoadCase, SolverSettings]
) -> np.ndarray:
    mesh, material, load, settings = args
    return solve_with_retries(mesh, material, load, settings).u


def _solve_all(
    mesh: Mesh,
    material: AnyMaterial,
    loads: List[LoadCase],
    settings: SolverSettings,
    jobs: int,
) -> List[np.ndarray]:
    tasks = [(mesh, material, load, settings) for load in loads]
    if jobs <= 1:
        return [_solve_sample(task) for task in tasks]

    results = []
    with Pool(processes=jobs) as pool:
        for idx, u in enumerate(pool.imap(_solve_sample, tasks)):
            if idx % 5 == 0:
                log.info(f"{idx + 1}/{len(tasks)} forward samples solved")
            results.append(u)
    return results


def build_forecast(
    mesh: Mesh,
    material: AnyMaterial,
    field: TractionRandomField,
    load: LoadCase,
    solver_settings: Optional[SolverSettings] = None,
    settings: Optional[PCESettings] = None,
    rng: Optional[np.random.Generator] = None,
    jobs: int = 1,
) -> Forecast:
    """Sample the traction, solve each sample and fit the chaos expansion."""
    solver_settings = solver_settings or SolverSettings()
    settings = settings or PCESettings()
    nodes = stratified_normal_nodes(
        settings.n_samples, rng if settings.jitter else None
    )
    loads = [load.with_traction(sample_traction(field, xi)) for xi in nodes]
    displacements = _solve_all(mesh, material, loads, solver_settings, jobs)
    expansion = fit_pce(list(zip(nodes, displacements)), settings.order)
    log.info(
        "Fitted order-%d PCE on %d samples (normal-equation residual %.2e)",
        settings.order,
        settings.n_samples,
        expansion.normal_residual,
    )

    holdout_error = None
    if settings.holdout > 0:
        generator = rng if rng is not None else np.random.default_rng(0)
        checks = generator.standard_normal(settings.holdout)
        truth = _solve_all(
            mesh,
            material,
            [load.with_traction(sample_traction(field, xi)) for xi in checks],
            solver_settings,
            jobs,
        )
        errors = [
            np.linalg.norm(evaluate_pce(expansion, xi) - u)
            / max(np.linalg.norm(u), np.finfo(float).tiny)
            for xi, u in zip(checks, truth)
        ]
        holdout_error = float(max(errors))
        log.info("PCE hold-out relative error: %.3e", holdout_error)
    return Forecast(expansion=expansion, nodes=nodes, holdout_error=holdout_error)
