# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Accuracy metrics comparing a discovered model with the ground truth."""

import logging
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .constitutive import (
    as_material,
    DeformationState,
    MaterialParams,
    strain_energy_from_invariants,
)
from .errors import ConfigError
from .mesh import Mesh
from .solver import (
    AnyMaterial,
    checked_deformation_gradients,
    load_scale_sweep,
    LoadCase,
    SolverSettings,
)

log: logging.Logger = logging.getLogger("hyperdisc")

GRID_SAMPLES = 100
ZERO_ENERGY = 1e-14


class InvariantRanges(NamedTuple):
    J1: Tuple[float, float]
    J2: Tuple[float, float]
    J3: Tuple[float, float]


class EnergyError(NamedTuple):
    value: float
    excluded: int
    total: int

    @property
    def excluded_fraction(self) -> float:
        return self.excluded / self.total if self.total else 0.0


class PointwiseErrors(NamedTuple):
    displacement: np.ndarray
    von_mises: np.ndarray


def invariant_ranges(mesh: Mesh, u: np.ndarray) -> InvariantRanges:
    """Min/max of J1, J2, J3 over all Gauss points of a field."""
    state = DeformationState.from_F(checked_deformation_gradients(mesh, u))
    return InvariantRanges(
        J1=(float(state.J1.min()), float(state.J1.max())),
        J2=(float(state.J2.min()), float(state.J2.max())),
        J3=(float(state.J3.min()), float(state.J3.max())),
    )


def error_eps_W(
    truth: MaterialParams,
    disc: MaterialParams,
    ranges: InvariantRanges,
    samples: int = GRID_SAMPLES,
) -> EnergyError:
    """Mean of squared relative strain-energy differences over an invariant grid.

    Grid points where the true energy is (numerically) zero are skipped and
    counted.
    """
    J1 = np.linspace(*ranges.J1, samples)
    J2, J3 = np.meshgrid(
        np.linspace(*ranges.J2, samples),
        np.linspace(*ranges.J3, samples),
        indexing="ij",
    )
    total = 0.0
    excluded = 0
    # one J1 slice at a time keeps the feature tensor small
    for value in J1:
        J1_slice = np.full_like(J2, value)
        w_true = strain_energy_from_invariants(J1_slice, J2, J3, truth)
        w_disc = strain_energy_from_invariants(J1_slice, J2, J3, disc)
        keep = np.abs(w_true) >= ZERO_ENERGY
        excluded += int(np.count_nonzero(~keep))
        total += float(np.sum(((w_true[keep] - w_disc[keep]) / w_true[keep]) ** 2))
    count = samples ** 3
    if excluded:
        log.info("eps_W skipped %d of %d grid points with zero true energy", excluded, count)
    kept = count - excluded
    value = total / kept if kept else 0.0
    return EnergyError(value=value, excluded=excluded, total=count)


def error_eps_u(u_disc: np.ndarray, u_true: np.ndarray) -> float:
    u_disc = np.asarray(u_disc, dtype=float)
    u_true = np.asarray(u_true, dtype=float)
    if u_disc.shape != u_true.shape:
        raise ConfigError("displacement fields live on different DOF sets")
    norm = float(np.linalg.norm(u_true))
    if norm == 0.0:
        raise ConfigError("the true displacement field is zero")
    return float(np.linalg.norm(u_disc - u_true) / norm)


def von_mises(sigma: np.ndarray) -> np.ndarray:
    """sqrt(sxx^2 - sxx syy + syy^2 + 3 sxy^2) on in-plane stresses (..., 2, 2)."""
    sxx = sigma[..., 0, 0]
    syy = sigma[..., 1, 1]
    sxy = sigma[..., 0, 1]
    return np.sqrt(sxx ** 2 - sxx * syy + syy ** 2 + 3.0 * sxy ** 2)


def gauss_to_nodes(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Lumped L2 projection of Gauss-point values (n_elements, 4) onto nodes."""
    quadrature = mesh.quadrature
    weights = np.einsum("eg,ga->ea", quadrature.wdet, quadrature.N)
    numerator = np.einsum("eg,ga,eg->ea", quadrature.wdet, quadrature.N, values)
    nodes = mesh.elements.ravel()
    lumped = np.bincount(nodes, weights=weights.ravel(), minlength=mesh.n_nodes)
    projected = np.bincount(nodes, weights=numerator.ravel(), minlength=mesh.n_nodes)
    return projected / np.where(lumped > 0.0, lumped, 1.0)


def von_mises_field(mesh: Mesh, u: np.ndarray, material: AnyMaterial) -> np.ndarray:
    F = checked_deformation_gradients(mesh, u)
    sigma = as_material(material).cauchy_stress(F)
    return gauss_to_nodes(mesh, von_mises(sigma))


def pointwise_errors(
    mesh: Mesh,
    u_disc: np.ndarray,
    u_true: np.ndarray,
    disc: AnyMaterial,
    truth: AnyMaterial,
) -> PointwiseErrors:
    """Nodal |‖u_disc‖ - ‖u_true‖| and absolute von Mises stress difference."""
    magnitude_disc = np.linalg.norm(np.asarray(u_disc).reshape(-1, 2), axis=1)
    magnitude_true = np.linalg.norm(np.asarray(u_true).reshape(-1, 2), axis=1)
    stress_disc = von_mises_field(mesh, u_disc, disc)
    stress_true = von_mises_field(mesh, u_true, truth)
    return PointwiseErrors(
        displacement=np.abs(magnitude_disc - magnitude_true),
        von_mises=np.abs(stress_disc - stress_true),
    )


def pointwise_frame(mesh: Mesh, errors: PointwiseErrors) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "node": np.arange(mesh.n_nodes),
            "x": mesh.nodes[:, 0],
            "y": mesh.nodes[:, 1],
            "displacement_error": errors.displacement,
            "von_mises_error": errors.von_mises,
        }
    )


def _marked_element(mesh: Mesh, point: Optional[Sequence[float]]) -> int:
    """Element at ``point``; by default the one next to the top of the hole,
    where the strain concentrates."""
    if point is None:
        if mesh.hole is not None:
            point = (mesh.hole.cx, mesh.hole.cy + 1.05 * mesh.hole.radius)
        else:
            point = (0.5 * mesh.width, 0.5 * mesh.height)
    return mesh.element_of(point)


def energy_curve(
    mesh: Mesh,
    materials: Sequence[Tuple[str, AnyMaterial]],
    load: LoadCase,
    etas: Sequence[float],
    point: Optional[Sequence[float]] = None,
    settings: Optional[SolverSettings] = None,
) -> pd.DataFrame:
    """Strain energy at one element against the load scale, per model."""
    element = _marked_element(mesh, point)
    frame = pd.DataFrame({"eta": sorted(float(eta) for eta in etas)})
    for name, material in materials:
        fields = load_scale_sweep(mesh, material, load, frame["eta"], settings)
        energies = []
        for field in fields:
            F = checked_deformation_gradients(mesh, field.u)[element]
            energies.append(float(np.mean(as_material(material).strain_energy(F))))
        frame[name] = energies
    return frame


def invariant_energy_curves(
    mesh: Mesh,
    models: Sequence[Tuple[str, MaterialParams]],
    truth: MaterialParams,
    load: LoadCase,
    etas: Sequence[float],
    point: Optional[Sequence[float]] = None,
    settings: Optional[SolverSettings] = None,
) -> pd.DataFrame:
    """W against the modified invariants at one element, one row per model and
    load scale.

    Each model is loaded through ``etas``; J1, J2, J3 are the element's
    Gauss-point means, and ``W`` and ``W_truth`` evaluate the model's and the
    true energy at those invariants.
    """
    element = _marked_element(mesh, point)
    etas = sorted(float(eta) for eta in etas)
    rows = []
    for name, params in models:
        for eta, field in zip(etas, load_scale_sweep(mesh, params, load, etas, settings)):
            F = checked_deformation_gradients(mesh, field.u)[element]
            state = DeformationState.from_F(F)
            J = np.array([[state.J1.mean()], [state.J2.mean()], [state.J3.mean()]])
            rows.append(
                {
                    "model": name,
                    "eta": eta,
                    "J1": float(J[0, 0]),
                    "J2": float(J[1, 0]),
                    "J3": float(J[2, 0]),
                    "W": float(strain_energy_from_invariants(*J, params)[0]),
                    "W_truth": float(strain_energy_from_invariants(*J, truth)[0]),
                }
            )
    return pd.DataFrame(
        rows, columns=["model", "eta", "J1", "J2", "J3", "W", "W_truth"]
    )
