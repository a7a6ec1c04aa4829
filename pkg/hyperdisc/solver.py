# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Total-Lagrangian finite element solver for the plate problem.

Newton's method with incremental loading drives the residual
``internal_force(u) - external_force(load)`` to zero on the free DOFs.
Traction is a dead load defined on the reference boundary.
"""

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .constitutive import as_material, Material, MaterialParams
from .errors import ConfigError, InvertedElementError, NewtonDivergenceError
from .mesh import DIM, Mesh

log: logging.Logger = logging.getLogger("hyperdisc")

AnyMaterial = Union[MaterialParams, Material]


@dataclass(frozen=True)
class LoadCase:
    # traction at full load (eta = 1), MPa
    traction: Tuple[float, float] = (0.5, 0.0)
    eta: float = 1.0
    body_force: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"load scale eta must lie in [0, 1], got {self.eta}")

    def scaled(self, eta: float) -> "LoadCase":
        return dataclasses.replace(self, eta=eta)

    def with_traction(self, traction: Sequence[float]) -> "LoadCase":
        return dataclasses.replace(self, traction=(float(traction[0]), float(traction[1])))


@dataclass(frozen=True)
class SolverSettings:
    newton_tol: float = 1e-10
    max_iters: int = 25
    n_load_steps: int = 5
    # attempts with doubled load steps after a failed solve
    load_step_retries: int = 2

    def __post_init__(self) -> None:
        if self.newton_tol <= 0.0:
            raise ConfigError("newton_tol must be positive")
        if self.n_load_steps < 1:
            raise ConfigError("n_load_steps must be >= 1")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.load_step_retries < 0:
            raise ConfigError("load_step_retries must be >= 0")


@dataclass(frozen=True, eq=False)
class DisplacementField:
    u: np.ndarray
    # Newton iterations used per load step
    iterations: Tuple[int, ...] = ()
    # residual norms of the last load step
    residuals: Tuple[float, ...] = ()

    @property
    def nodal(self) -> np.ndarray:
        return self.u.reshape(-1, DIM)

    def magnitude(self) -> np.ndarray:
        return np.linalg.norm(self.nodal, axis=1)

    def to_frame(self, mesh: Mesh) -> pd.DataFrame:
        nodal = self.nodal
        return pd.DataFrame(
            {
                "node": np.arange(mesh.n_nodes),
                "x": mesh.nodes[:, 0],
                "y": mesh.nodes[:, 1],
                "ux": nodal[:, 0],
                "uy": nodal[:, 1],
            }
        )

    def to_csv(self, path: Union[str, Path], mesh: Mesh) -> None:
        self.to_frame(mesh).to_csv(path, index=False, float_format="%.17g")

    @staticmethod
    def from_csv(path: Union[str, Path]) -> "DisplacementField":
        frame = pd.read_csv(path).sort_values("node")
        return DisplacementField(frame[["ux", "uy"]].to_numpy(dtype=float).ravel())


def element_displacements(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    return np.asarray(u, dtype=float)[mesh.element_dofs].reshape(mesh.n_elements, 4, DIM)


def deformation_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """F at every Gauss point, shape (n_elements, 4, 2, 2)."""
    grad = np.einsum(
        "eai,egaJ->egiJ", element_displacements(mesh, u), mesh.quadrature.dN_dX
    )
    return grad + np.eye(DIM)


def checked_deformation_gradients(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    F = deformation_gradients(mesh, u)
    bad = np.flatnonzero((np.linalg.det(F) <= 0.0).any(axis=1))
    if bad.size:
        raise InvertedElementError("inverted element", element=int(bad[0]))
    return F


def assemble_vector(mesh: Mesh, element_vectors: np.ndarray) -> np.ndarray:
    return np.bincount(
        mesh.element_dofs.ravel(),
        weights=element_vectors.reshape(mesh.n_elements, -1).ravel(),
        minlength=mesh.n_gdof,
    )


def integrate_stress(mesh: Mesh, P: np.ndarray) -> np.ndarray:
    """Assemble int P : grad(v) over the mesh for Gauss-point stresses P."""
    quadrature = mesh.quadrature
    element_vectors = np.einsum(
        "eg,egiJ,egaJ->eai", quadrature.wdet, P, quadrature.dN_dX
    )
    return assemble_vector(mesh, element_vectors)


def internal_force(mesh: Mesh, u: np.ndarray, material: AnyMaterial) -> np.ndarray:
    F = checked_deformation_gradients(mesh, u)
    return integrate_stress(mesh, as_material(material).first_pk(F))


def tangent_stiffness(
    mesh: Mesh, u: np.ndarray, material: AnyMaterial
) -> sparse.csr_matrix:
    """Consistent tangent of the internal force, material plus geometric part."""
    F = checked_deformation_gradients(mesh, u)
    _, A = as_material(material).first_pk_and_tangent(F)
    quadrature = mesh.quadrature
    blocks = np.einsum(
        "eg,egaJ,egiJkL,egbL->eaibk",
        quadrature.wdet,
        quadrature.dN_dX,
        A,
        quadrature.dN_dX,
    ).reshape(mesh.n_elements, 4 * DIM, 4 * DIM)
    dofs = mesh.element_dofs
    rows = np.broadcast_to(dofs[:, :, None], blocks.shape)
    cols = np.broadcast_to(dofs[:, None, :], blocks.shape)
    return sparse.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.n_gdof, mesh.n_gdof),
    ).tocsr()


def external_force(mesh: Mesh, load: LoadCase) -> np.ndarray:
    """Consistent nodal loads of eta * traction on the Neumann edges plus the
    body force."""
    force = np.zeros(mesh.n_gdof)
    traction = load.eta * np.asarray(load.traction, dtype=float)
    for element, local_edge in mesh.neumann_edges:
        a, b = mesh.edge_nodes(element, local_edge)
        length = float(np.linalg.norm(mesh.nodes[b] - mesh.nodes[a]))
        for node in (a, b):
            force[DIM * node : DIM * node + DIM] += 0.5 * length * traction

    body = load.eta * np.asarray(load.body_force, dtype=float)
    if np.any(body):
        quadrature = mesh.quadrature
        element_vectors = np.einsum(
            "eg,ga,i->eai", quadrature.wdet, quadrature.N, body
        )
        force += assemble_vector(mesh, element_vectors)
    return force


def _newton(
    mesh: Mesh,
    material: Material,
    u: np.ndarray,
    f_ext: np.ndarray,
    settings: SolverSettings,
) -> Tuple[np.ndarray, int, List[float]]:
    free = mesh.free_dofs
    history: List[float] = []
    for iteration in range(1, settings.max_iters + 1):
        residual = internal_force(mesh, u, material) - f_ext
        norm = float(np.linalg.norm(residual[free]))
        history.append(norm)
        log.debug("Newton iteration %d: residual %.3e", iteration, norm)
        if norm <= settings.newton_tol:
            return u, iteration, history
        K = tangent_stiffness(mesh, u, material)[free][:, free]
        u[free] += spsolve(K.tocsc(), -residual[free])
    raise NewtonDivergenceError(
        f"Newton did not converge in {settings.max_iters} iterations", history[-1]
    )


def solve_forward(
    mesh: Mesh,
    material: AnyMaterial,
    load: LoadCase,
    settings: Optional[SolverSettings] = None,
    initial: Optional[np.ndarray] = None,
    prescribed: Optional[np.ndarray] = None,
) -> DisplacementField:
    """Solve the boundary value problem at load scale ``load.eta``.

    ``prescribed`` holds values for ``mesh.dirichlet_dofs`` (zero by default)
    and is ramped together with the load. With an ``initial`` guess the full
    load is applied in a single step.
    """
    settings = settings or SolverSettings()
    material = as_material(material)
    u = np.zeros(mesh.n_gdof) if initial is None else np.array(initial, dtype=float)
    target = (
        np.zeros(mesh.dirichlet_dofs.size)
        if prescribed is None
        else np.asarray(prescribed, dtype=float)
    )

    if material.is_linear or initial is not None or load.eta == 0.0:
        fractions = [1.0]
    else:
        fractions = [k / settings.n_load_steps for k in range(1, settings.n_load_steps + 1)]

    iterations: List[int] = []
    history: List[float] = []
    for fraction in fractions:
        u[mesh.dirichlet_dofs] = fraction * target
        f_ext = external_force(mesh, load.scaled(fraction * load.eta))
        u, count, history = _newton(mesh, material, u, f_ext, settings)
        iterations.append(count)

    log.debug(
        "Forward solve (%s, eta=%g) converged: iterations per step %s",
        material.describe(),
        load.eta,
        iterations,
    )
    return DisplacementField(u=u, iterations=tuple(iterations), residuals=tuple(history))


def solve_with_retries(
    mesh: Mesh,
    material: AnyMaterial,
    load: LoadCase,
    settings: Optional[SolverSettings] = None,
) -> DisplacementField:
    """solve_forward that doubles the load steps after an inverted element or
    a diverged Newton solve, up to ``settings.load_step_retries`` times."""
    settings = settings or SolverSettings()
    retries = 0 if as_material(material).is_linear else settings.load_step_retries
    for attempt in range(retries + 1):
        try:
            return solve_forward(mesh, material, load, settings)
        except (InvertedElementError, NewtonDivergenceError) as error:
            if attempt == retries:
                raise
            settings = dataclasses.replace(
                settings, n_load_steps=2 * settings.n_load_steps
            )
            log.info(
                "Forward solve failed (%s); retrying with %d load steps",
                error,
                settings.n_load_steps,
            )
    raise NewtonDivergenceError("no forward solve attempted", float("nan"))


def load_scale_sweep(
    mesh: Mesh,
    material: AnyMaterial,
    load: LoadCase,
    etas: Sequence[float],
    settings: Optional[SolverSettings] = None,
) -> List[DisplacementField]:
    """Fields at increasing load scales, each warm-started from the previous."""
    etas = sorted(float(eta) for eta in etas)
    fields: List[DisplacementField] = []
    previous: Optional[np.ndarray] = None
    for eta in etas:
        field = solve_forward(
            mesh, material, load.scaled(eta), settings, initial=previous
        )
        fields.append(field)
        previous = field.u
    return fields
