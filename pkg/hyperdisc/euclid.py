# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Weak-form sparse regression of the strain energy.

For a measured displacement field the internal force is linear in the
coefficient vector, ``A(u) kappa``. Discovery solves a non-negative LASSO
with the volumetric penalty constraint ``r * sum(A_ij) - sum(B_i) = 0`` along
a lambda path and picks the sparsest admissible model.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .constitutive import (
    ACTIVE_THRESHOLD,
    DEFAULT_LIBRARY,
    DeformationState,
    feature_stresses,
    FeatureLibrary,
    MaterialParams,
)
from .errors import ConfigError, LassoConvergenceError, NoAdmissibleModelError
from .mesh import Mesh
from .solver import checked_deformation_gradients, integrate_stress

log: logging.Logger = logging.getLogger("hyperdisc")


@dataclass(frozen=True)
class EuclidSettings:
    lambda_min: float = 1e-2
    lambda_max: float = 1e10
    n_lambda: int = 1000
    tau: float = 70.0
    # volumetric penalty multiplier; None drops the constraint
    r: Optional[float] = 3.0
    # RMSE of the empty model after normalization
    reference_rmse: float = 1e4
    tol: float = 1e-9
    warm_start: bool = True
    # feature library searched by the regression
    n_mr: int = 3
    n_vol: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.lambda_min < self.lambda_max:
            raise ConfigError("lambda range must satisfy 0 < lambda_min < lambda_max")
        if self.n_lambda < 2:
            raise ConfigError("n_lambda must be >= 2")
        if self.tau <= 0.0:
            raise ConfigError("tau must be positive")
        if self.r is not None and self.r <= 0.0:
            raise ConfigError("r must be positive")
        if self.reference_rmse <= 0.0:
            raise ConfigError("reference_rmse must be positive")
        FeatureLibrary(self.n_mr, self.n_vol)

    @property
    def library(self) -> FeatureLibrary:
        return FeatureLibrary(self.n_mr, self.n_vol)

    def lambdas(self) -> np.ndarray:
        return np.logspace(
            np.log10(self.lambda_min), np.log10(self.lambda_max), self.n_lambda
        )


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    # full matrix, shape (n_gdof, n_phi)
    A: np.ndarray
    free_rows: np.ndarray
    library: FeatureLibrary = DEFAULT_LIBRARY

    @property
    def free(self) -> np.ndarray:
        return self.A[self.free_rows]

    def force(self, params: MaterialParams) -> np.ndarray:
        return self.A @ params.kappa


def assemble_feature_matrix(
    mesh: Mesh, u: np.ndarray, library: FeatureLibrary = DEFAULT_LIBRARY
) -> FeatureMatrix:
    """Column j is the assembled int (F dphi_j/dE) : grad(v) dOmega."""
    F = checked_deformation_gradients(mesh, u)
    stresses = feature_stresses(DeformationState.from_F(F), library)
    P = np.einsum("egiI,pegIJ->pegiJ", F, stresses)
    columns = [integrate_stress(mesh, P[j]) for j in range(library.n_phi)]
    return FeatureMatrix(
        A=np.column_stack(columns), free_rows=mesh.free_dofs, library=library
    )


class RegressionProblem(NamedTuple):
    A: np.ndarray
    p: np.ndarray
    # factor applied to both A and p
    scale: float

    @property
    def n_rows(self) -> int:
        return int(self.A.shape[0])


def normalize(A: np.ndarray, p: np.ndarray, reference_rmse: float) -> RegressionProblem:
    """Scale A and p together so that the empty model has RMSE ``reference_rmse``."""
    rms = float(np.sqrt(np.mean(np.asarray(p, dtype=float) ** 2)))
    if rms == 0.0:
        raise ConfigError("external force vanishes on the free rows; nothing to fit")
    scale = reference_rmse / rms
    return RegressionProblem(A=scale * np.asarray(A), p=scale * np.asarray(p), scale=scale)


def constraint_vector(library: FeatureLibrary, r: Optional[float]) -> Optional[np.ndarray]:
    if r is None:
        return None
    return np.where(library.isochoric_mask, float(r), -1.0)


def residual_rmse(A: np.ndarray, p: np.ndarray, kappa: np.ndarray) -> float:
    return float(np.sqrt(np.sum((p - A @ kappa) ** 2) / A.shape[0]))


def _bound_multiplier(
    gradient: np.ndarray, c: Optional[np.ndarray], free: np.ndarray
) -> float:
    """Equality multiplier consistent with the stationarity of the free entries;
    with no free entry, the one maximizing the smallest bound multiplier."""
    if c is None:
        return 0.0
    if free.any():
        cf = c[free]
        return float(-(cf @ gradient[free]) / (cf @ cf))
    positive = c > 0
    negative = c < 0
    if not positive.any() or not negative.any():
        return 0.0
    # isochoric entries carry c = r, volumetric ones c = -1
    r = float(c[positive].max())
    return float((gradient[negative].min() - gradient[positive].min()) / (r + 1.0))


def kkt_residual(
    A: np.ndarray,
    p: np.ndarray,
    lam: float,
    kappa: np.ndarray,
    c: Optional[np.ndarray] = None,
) -> float:
    """Largest violation of the optimality conditions, relative to the
    gradient scale of the problem."""
    gradient = 2.0 * A.T @ (A @ kappa - p) + lam
    free = kappa > ACTIVE_THRESHOLD
    mu = _bound_multiplier(gradient, c, free)
    z = gradient + (mu * c if c is not None else 0.0)
    scale = max(float(np.abs(2.0 * A.T @ p).max()), lam, 1.0)
    violations = [
        np.abs(z[free]).max() if free.any() else 0.0,
        max(0.0, -float(z[~free].min())) if (~free).any() else 0.0,
        float(np.abs(kappa * z).max()) / max(float(np.abs(kappa).max()), 1.0),
    ]
    residual = max(violations) / scale
    if c is not None:
        residual = max(residual, abs(float(c @ kappa)) / max(float(np.abs(kappa).sum()), 1.0))
    return float(residual)


def _solve_free(
    G: np.ndarray, g: np.ndarray, c: Optional[np.ndarray], free: np.ndarray
) -> Tuple[np.ndarray, float]:
    """Minimize 1/2 k^T G k + g^T k over the free entries, others fixed at 0."""
    index = np.flatnonzero(free)
    n = index.size
    target = np.zeros(G.shape[0])
    if n == 0:
        return target, 0.0
    if c is None:
        system = G[np.ix_(index, index)]
        rhs = -g[index]
        solution = np.linalg.lstsq(system, rhs, rcond=None)[0]
        target[index] = solution
        return target, 0.0
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = G[np.ix_(index, index)]
    system[:n, n] = c[index]
    system[n, :n] = c[index]
    rhs = np.concatenate([-g[index], [0.0]])
    solution = np.linalg.lstsq(system, rhs, rcond=None)[0]
    target[index] = solution[:n]
    return target, float(solution[n])


def solve_constrained_lasso(
    A: np.ndarray,
    p: np.ndarray,
    lam: float,
    r: Optional[float] = 3.0,
    library: FeatureLibrary = DEFAULT_LIBRARY,
    kappa0: Optional[np.ndarray] = None,
    tol: float = 1e-9,
    max_iterations: Optional[int] = None,
) -> np.ndarray:
    """Minimize ||A k - p||^2 + lam * sum(k) subject to k >= 0 and the
    volumetric penalty constraint, by a primal active-set method.

    ``kappa0`` warm-starts the iteration when it is feasible; otherwise the
    iteration starts from zero.
    """
    if lam < 0.0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    A = np.asarray(A, dtype=float)
    p = np.asarray(p, dtype=float)
    n_phi = A.shape[1]
    if n_phi != library.n_phi:
        raise ConfigError(f"feature matrix has {n_phi} columns, library {library.n_phi}")
    c = constraint_vector(library, r)
    G = 2.0 * A.T @ A
    g = -2.0 * A.T @ p + lam
    scale = max(float(np.abs(g).max()), float(np.abs(G).max()), 1.0)

    kappa = np.zeros(n_phi)
    if kappa0 is not None:
        start = np.clip(np.asarray(kappa0, dtype=float), 0.0, None)
        if c is None or abs(c @ start) <= 1e-12 * max(float(start.sum()), 1.0):
            kappa = start
    free = kappa > 0.0
    kappa[~free] = 0.0

    limit = max_iterations or 50 * n_phi
    for _ in range(limit):
        target, mu = _solve_free(G, g, c, free)
        step = target - kappa
        blocking = free & (target < 0.0)
        if blocking.any():
            ratios = kappa[blocking] / (kappa[blocking] - target[blocking])
            alpha = float(ratios.min())
            kappa = kappa + alpha * step
            hit = np.flatnonzero(blocking)[np.argmin(ratios)]
            kappa[hit] = 0.0
            free[hit] = False
            kappa[kappa < 0.0] = 0.0
            free &= kappa > 0.0
            continue

        kappa = np.where(free, target, 0.0)
        gradient = G @ kappa + g
        if not free.any():
            mu = _bound_multiplier(gradient, c, free)
        z = gradient + (mu * c if c is not None else 0.0)
        candidates = np.flatnonzero(~free)
        if candidates.size == 0:
            break
        worst = candidates[np.argmin(z[candidates])]
        if z[worst] >= -tol * scale:
            break
        free[worst] = True
    else:
        residual = kkt_residual(A, p, lam, kappa, c)
        raise LassoConvergenceError(
            f"active-set iteration did not terminate in {limit} steps", residual, lam
        )

    if c is not None and free.any():
        # remove round-off drift from the equality constraint
        cf = c[free]
        kappa[free] -= cf * (c @ kappa) / (cf @ cf)
        np.clip(kappa, 0.0, None, out=kappa)
    return kappa


class ParetoPoint(NamedTuple):
    lam: float
    kappa: np.ndarray
    rmse: float
    l1_norm: float
    n_active: int


def lambda_path(
    A: np.ndarray,
    p: np.ndarray,
    settings: Optional[EuclidSettings] = None,
    library: FeatureLibrary = DEFAULT_LIBRARY,
    lambdas: Optional[Sequence[float]] = None,
) -> List[ParetoPoint]:
    """One Pareto point per lambda, warm-started along increasing lambda."""
    settings = settings or EuclidSettings()
    grid = settings.lambdas() if lambdas is None else np.asarray(lambdas, dtype=float)
    path: List[ParetoPoint] = []
    previous: Optional[np.ndarray] = None
    for lam in grid:
        try:
            kappa = solve_constrained_lasso(
                A,
                p,
                float(lam),
                r=settings.r,
                library=library,
                kappa0=previous if settings.warm_start else None,
                tol=settings.tol,
            )
        except LassoConvergenceError as error:
            if error.lam is None:
                raise LassoConvergenceError(
                    "active-set iteration failed on the lambda path",
                    error.kkt_residual,
                    float(lam),
                )
            raise
        previous = kappa
        path.append(
            ParetoPoint(
                lam=float(lam),
                kappa=kappa,
                rmse=residual_rmse(A, p, kappa),
                l1_norm=float(kappa.sum()),
                n_active=int(np.count_nonzero(kappa > ACTIVE_THRESHOLD)),
            )
        )
    return path


@dataclass(frozen=True, eq=False)
class DiscoveredModel:
    kappa_star: np.ndarray
    lambda_star: float
    active_set: Tuple[int, ...]
    pareto_path: List[ParetoPoint] = field(default_factory=list)
    library: FeatureLibrary = DEFAULT_LIBRARY
    rmse_star: float = 0.0
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def params(self) -> MaterialParams:
        return MaterialParams(self.kappa_star, self.library)

    def expression(self) -> str:
        return self.params.expression()


def admissible(path: Sequence[ParetoPoint], tau: float) -> List[ParetoPoint]:
    return [point for point in path if point.rmse < tau and point.n_active > 0]


def select_model(
    path: Sequence[ParetoPoint],
    tau: float,
    library: FeatureLibrary = DEFAULT_LIBRARY,
) -> DiscoveredModel:
    """Sparsest admissible model, then smallest RMSE; exact RMSE ties go to
    the larger lambda."""
    accepted = admissible(path, tau)
    if not accepted:
        best = min((point.rmse for point in path), default=float("inf"))
        raise NoAdmissibleModelError(f"no model on the path reaches RMSE < {tau:g}", best)
    n_min = min(point.n_active for point in accepted)
    sparsest = [point for point in accepted if point.n_active == n_min]
    chosen = min(sparsest, key=lambda point: (point.rmse, -point.lam))
    log.info(
        "Admissible lambda interval [%.3e, %.3e] (%d points), %d active terms",
        min(point.lam for point in accepted),
        max(point.lam for point in accepted),
        len(accepted),
        n_min,
    )
    return DiscoveredModel(
        kappa_star=chosen.kappa.copy(),
        lambda_star=chosen.lam,
        active_set=tuple(int(i) for i in np.flatnonzero(chosen.kappa > ACTIVE_THRESHOLD)),
        pareto_path=list(path),
        library=library,
        rmse_star=chosen.rmse,
    )


def select_widening(
    path: Sequence[ParetoPoint],
    tau: float,
    limit: float,
    library: FeatureLibrary = DEFAULT_LIBRARY,
) -> Tuple[DiscoveredModel, float]:
    """``select_model`` with tau doubled while nothing is admissible.

    The last doubling is clipped to ``limit``; returns the model and the tau
    that admitted it.
    """
    while True:
        try:
            return select_model(path, tau, library), tau
        except NoAdmissibleModelError as error:
            if tau >= limit:
                raise
            widened = min(2.0 * tau, limit)
            log.info(
                "No admissible model at tau %g (best RMSE %.3g), widening to %g",
                tau,
                error.best_rmse,
                widened,
            )
            tau = widened


def discover(
    A: np.ndarray,
    p: np.ndarray,
    settings: Optional[EuclidSettings] = None,
    library: FeatureLibrary = DEFAULT_LIBRARY,
    tau: Optional[float] = None,
    max_tau: Optional[float] = None,
) -> DiscoveredModel:
    """Normalize, run the lambda path and select a model.

    With ``max_tau`` an empty admissible set is re-read with tau doubled up
    to that value.
    """
    settings = settings or EuclidSettings()
    problem = normalize(A, p, settings.reference_rmse)
    path = lambda_path(problem.A, problem.p, settings, library)
    model_tau = settings.tau if tau is None else tau
    limit = model_tau if max_tau is None else max(max_tau, model_tau)
    model, model_tau = select_widening(path, model_tau, limit, library)
    model.metadata.update(
        {"n_rows": problem.n_rows, "scale": problem.scale, "tau": model_tau}
    )
    return model


def pareto_to_frame(path: Sequence[ParetoPoint], library: FeatureLibrary) -> pd.DataFrame:
    frame = pd.DataFrame(
        {
            "lambda": [point.lam for point in path],
            "rmse": [point.rmse for point in path],
            "l1_norm": [point.l1_norm for point in path],
            "n_active": [point.n_active for point in path],
        }
    )
    coefficients = np.array([point.kappa for point in path]).reshape(len(path), -1)
    for j, name in enumerate(library.names()):
        frame[name] = coefficients[:, j] if len(path) else []
    return frame
