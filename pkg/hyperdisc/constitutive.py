# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Generalized Mooney-Rivlin feature library and the materials built on it.

All kinematic quantities are vectorized over leading axes: a deformation
gradient of shape (..., 2, 2) gives invariants of shape (...) and stresses of
shape (..., 2, 2). The in-plane gradient is embedded in 3D with F_33 = 1
(plane strain) before any invariant is computed.
"""

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple, Union

import numpy as np
from typing_extensions import Final

from .errors import ConfigError, InvertedElementError

log: logging.Logger = logging.getLogger("hyperdisc")

# Numerical zero for active coefficients.
ACTIVE_THRESHOLD: Final[float] = 1e-10

_I3 = np.eye(3)
_I2 = np.eye(2)


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...kl->...ijkl", a, b)


def _sym_product(a: np.ndarray) -> np.ndarray:
    # (a (.) a)_ijkl = (a_ik a_jl + a_il a_jk) / 2
    return 0.5 * (
        np.einsum("...ik,...jl->...ijkl", a, a) + np.einsum("...il,...jk->...ijkl", a, a)
    )


_SYM_IDENTITY = _sym_product(_I3)
_IDENTITY_OUTER = _outer(_I3, _I3)


def embed_plane_strain(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    full = np.zeros(F.shape[:-2] + (3, 3))
    full[..., :2, :2] = F
    full[..., 2, 2] = 1.0
    return full


def _first_bad(invalid: np.ndarray) -> Optional[int]:
    """Leading-axis index of the first invalid entry.

    Batched kinematics have shape (n_elements, n_gauss), so the leading index
    is the element.
    """
    invalid = np.asarray(invalid)
    if not invalid.any():
        return None
    if invalid.ndim == 0:
        return 0
    return int(np.argwhere(invalid)[0][0])


class DeformationState(NamedTuple):
    C: np.ndarray
    C_inv: np.ndarray
    I1: np.ndarray
    I2: np.ndarray
    I3: np.ndarray
    J1: np.ndarray
    J2: np.ndarray
    J3: np.ndarray
    F: Optional[np.ndarray] = None

    @staticmethod
    def from_C(C: np.ndarray, F: Optional[np.ndarray] = None) -> "DeformationState":
        """State from a 3x3 (or in-plane 2x2) right Cauchy-Green tensor."""
        C = np.asarray(C, dtype=float)
        if C.shape[-1] == 2:
            C = embed_plane_strain(C)
        I3 = np.linalg.det(C)
        bad = _first_bad(I3 <= 0.0)
        if bad is not None:
            raise InvertedElementError("non-positive volume ratio", element=bad)
        I1 = np.trace(C, axis1=-2, axis2=-1)
        I2 = 0.5 * (I1 ** 2 - np.einsum("...ij,...ji->...", C, C))
        return DeformationState(
            C=C,
            C_inv=np.linalg.inv(C),
            I1=I1,
            I2=I2,
            I3=I3,
            J1=I1 * I3 ** (-1.0 / 3.0),
            J2=I2 * I3 ** (-2.0 / 3.0),
            J3=np.sqrt(I3),
            F=F,
        )

    @staticmethod
    def from_F(F: np.ndarray) -> "DeformationState":
        F = np.asarray(F, dtype=float)
        det = np.linalg.det(F)
        bad = _first_bad(det <= 0.0)
        if bad is not None:
            raise InvertedElementError(
                "non-positive deformation gradient determinant", element=bad
            )
        full = embed_plane_strain(F) if F.shape[-1] == 2 else F
        return DeformationState.from_C(
            np.einsum("...ki,...kj->...ij", full, full), F=F
        )

    @staticmethod
    def from_E(E: np.ndarray) -> "DeformationState":
        E = np.asarray(E, dtype=float)
        identity = _I2 if E.shape[-1] == 2 else _I3
        return DeformationState.from_C(identity + 2.0 * E)


def modified_invariants(F: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    state = DeformationState.from_F(F)
    return state.J1, state.J2, state.J3


class InvariantDerivatives(NamedTuple):
    # first[a]: dJ_{a+1}/dE, shape (3, ..., 3, 3)
    first: np.ndarray
    # second[a]: d2J_{a+1}/dE2, shape (3, ..., 3, 3, 3, 3)
    second: np.ndarray


def invariant_derivatives(state: DeformationState) -> InvariantDerivatives:
    """First and second derivatives of J1, J2, J3 with respect to E = (C - I)/2."""
    C, Ci = state.C, state.C_inv
    I1 = state.I1[..., None, None]
    I2 = state.I2[..., None, None]
    a = (state.I3 ** (-1.0 / 3.0))[..., None, None]
    b = (state.I3 ** (-2.0 / 3.0))[..., None, None]
    J3 = state.J3[..., None, None]
    I1_4 = I1[..., None, None]
    I2_4 = I2[..., None, None]
    a4 = a[..., None, None]
    b4 = b[..., None, None]
    J3_4 = J3[..., None, None]

    shear = I1 * _I3 - C
    dJ1 = a * _I3 - (1.0 / 3.0) * I1 * a * Ci
    dJ2 = b * shear - (2.0 / 3.0) * I2 * b * Ci
    dJ3 = 0.5 * J3 * Ci

    Ci_Ci = _outer(Ci, Ci)
    Ci_sym = _sym_product(Ci)
    d2J1 = (
        -(a4 / 3.0)
        * (np.einsum("ij,...kl->...ijkl", _I3, Ci) + np.einsum("...ij,kl->...ijkl", Ci, _I3))
        + (a4 * I1_4 / 9.0) * Ci_Ci
        + (a4 * I1_4 / 3.0) * Ci_sym
    )
    d2J2 = (
        -(2.0 / 3.0) * b4 * (_outer(shear, Ci) + _outer(Ci, shear))
        + b4 * (_IDENTITY_OUTER - _SYM_IDENTITY)
        + (4.0 / 9.0) * I2_4 * b4 * Ci_Ci
        + (2.0 / 3.0) * I2_4 * b4 * Ci_sym
    )
    d2J3 = 0.25 * J3_4 * Ci_Ci - 0.5 * J3_4 * Ci_sym

    # C = I + 2E
    first = 2.0 * np.stack([dJ1, dJ2, dJ3])
    second = 4.0 * np.stack([d2J1, d2J2, d2J3])
    return InvariantDerivatives(first=first, second=second)


@dataclass(frozen=True)
class FeatureLibrary:
    """Isochoric terms (J1-3)^i (J2-3)^j for 1 <= i+j <= n_mr, graded by total
    degree then by descending i, followed by volumetric terms (J3-1)^(2k)."""

    n_mr: int = 3
    n_vol: int = 1

    def __post_init__(self) -> None:
        if not 1 <= self.n_mr <= 5:
            raise ConfigError(f"n_mr must lie in 1..5, got {self.n_mr}")
        if not 1 <= self.n_vol <= 2:
            raise ConfigError(f"n_vol must lie in 1..2, got {self.n_vol}")

    @cached_property
    def exponents(self) -> np.ndarray:
        """Rows (i, j, m) with phi = (J1-3)^i (J2-3)^j (J3-1)^m."""
        rows: List[Tuple[int, int, int]] = []
        for degree in range(1, self.n_mr + 1):
            for i in range(degree, -1, -1):
                rows.append((i, degree - i, 0))
        for k in range(1, self.n_vol + 1):
            rows.append((0, 0, 2 * k))
        exponents = np.array(rows, dtype=int)
        exponents.flags.writeable = False
        return exponents

    @property
    def n_phi(self) -> int:
        return self.n_mr * (self.n_mr + 3) // 2 + self.n_vol

    @property
    def n_isochoric(self) -> int:
        return self.n_phi - self.n_vol

    @property
    def isochoric_mask(self) -> np.ndarray:
        return self.exponents[:, 2] == 0

    def names(self) -> List[str]:
        names = [f"A{i}{j}" for i, j, m in self.exponents if m == 0]
        return names + [f"B{m // 2}" for _, _, m in self.exponents if m > 0]

    def labels(self) -> List[str]:
        labels = []
        for i, j, m in self.exponents:
            factors = []
            for base, power in (("(J1-3)", i), ("(J2-3)", j), ("(J3-1)", m)):
                if power == 1:
                    factors.append(base)
                elif power > 1:
                    factors.append(f"{base}^{power}")
            labels.append("*".join(factors))
        return labels

    def index(self, name: str) -> int:
        try:
            return self.names().index(name)
        except ValueError:
            raise ConfigError(f"`{name}` is not a coefficient of this library")

    def to_json(self) -> Dict[str, Any]:
        return {
            "n_mr": self.n_mr,
            "n_vol": self.n_vol,
            "exponents": self.exponents.tolist(),
        }

    @staticmethod
    def from_json(document: Mapping[str, Any]) -> "FeatureLibrary":
        return FeatureLibrary(n_mr=int(document["n_mr"]), n_vol=int(document["n_vol"]))


DEFAULT_LIBRARY = FeatureLibrary()


@dataclass(frozen=True, eq=False)
class MaterialParams:
    kappa: np.ndarray
    library: FeatureLibrary = DEFAULT_LIBRARY

    def __post_init__(self) -> None:
        kappa = np.array(self.kappa, dtype=float).ravel()
        if kappa.shape[0] != self.library.n_phi:
            raise ConfigError(
                f"expected {self.library.n_phi} coefficients, got {kappa.shape[0]}"
            )
        kappa.flags.writeable = False
        object.__setattr__(self, "kappa", kappa)

    @staticmethod
    def from_named(
        coefficients: Mapping[str, float], library: FeatureLibrary = DEFAULT_LIBRARY
    ) -> "MaterialParams":
        kappa = np.zeros(library.n_phi)
        for name, value in coefficients.items():
            kappa[library.index(name)] = float(value)
        return MaterialParams(kappa, library)

    def to_named(self) -> Dict[str, float]:
        return {name: float(k) for name, k in zip(self.library.names(), self.kappa)}

    def active_set(self, threshold: float = ACTIVE_THRESHOLD) -> np.ndarray:
        return np.flatnonzero(self.kappa > threshold)

    @property
    def n_active(self) -> int:
        return int(self.active_set().size)

    def expression(self, precision: int = 3, threshold: float = ACTIVE_THRESHOLD) -> str:
        """Strain energy in reading form, e.g. ``0.500*(J1-3) + 1.500*(J3-1)^2``."""
        labels = self.library.labels()
        terms = [
            f"{self.kappa[index]:.{precision}f}*{labels[index]}"
            for index in range(self.library.n_phi)
            if abs(self.kappa[index]) > threshold
        ]
        return " + ".join(terms) if terms else "0"

    def to_json(self) -> Dict[str, Any]:
        return {"library": self.library.to_json(), "coefficients": self.to_named()}

    @staticmethod
    def from_json(document: Union[str, Mapping[str, Any]]) -> "MaterialParams":
        if isinstance(document, str):
            document = json.loads(document)
        library = FeatureLibrary.from_json(document["library"])
        return MaterialParams.from_named(document["coefficients"], library)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MaterialParams):
            return NotImplemented
        return self.library == other.library and np.array_equal(self.kappa, other.kappa)

    def __repr__(self) -> str:
        return f"MaterialParams({self.expression()})"


def neo_hookean(library: FeatureLibrary = DEFAULT_LIBRARY) -> MaterialParams:
    return MaterialParams.from_named({"A10": 0.5, "B1": 1.5}, library)


def mooney_rivlin(library: FeatureLibrary = DEFAULT_LIBRARY) -> MaterialParams:
    return MaterialParams.from_named({"A10": 0.3, "A01": 0.2, "B1": 1.5}, library)


NAMED_MODELS = {"neo-hookean": neo_hookean, "mooney-rivlin": mooney_rivlin}


def _pow(x: np.ndarray, n: int) -> np.ndarray:
    if n < 0:
        return np.zeros_like(x)
    return x ** n


def _offsets(J1: np.ndarray, J2: np.ndarray, J3: np.ndarray) -> Tuple[np.ndarray, ...]:
    return (np.asarray(J1) - 3.0, np.asarray(J2) - 3.0, np.asarray(J3) - 1.0)


def features_from_invariants(
    J1: np.ndarray, J2: np.ndarray, J3: np.ndarray, library: FeatureLibrary
) -> np.ndarray:
    x = _offsets(J1, J2, J3)
    columns = [
        _pow(x[0], i) * _pow(x[1], j) * _pow(x[2], m) for i, j, m in library.exponents
    ]
    return np.stack(columns, axis=-1)


def evaluate_features(state: DeformationState, library: FeatureLibrary) -> np.ndarray:
    return features_from_invariants(state.J1, state.J2, state.J3, library)


def strain_energy_from_invariants(
    J1: np.ndarray, J2: np.ndarray, J3: np.ndarray, params: MaterialParams
) -> np.ndarray:
    return features_from_invariants(J1, J2, J3, params.library) @ params.kappa


def strain_energy(state: DeformationState, params: MaterialParams) -> np.ndarray:
    return evaluate_features(state, params.library) @ params.kappa


def _feature_gradients(state: DeformationState, library: FeatureLibrary) -> np.ndarray:
    """d phi / d(x1, x2, x3) per feature, shape (n_phi, 3, ...)."""
    x = _offsets(state.J1, state.J2, state.J3)
    n = library.exponents
    rows = []
    for e in n:
        rows.append(
            np.stack(
                [
                    e[a]
                    * np.prod(
                        [_pow(x[b], e[b] - (1 if b == a else 0)) for b in range(3)],
                        axis=0,
                    )
                    for a in range(3)
                ]
            )
        )
    return np.stack(rows)


def _feature_hessians(state: DeformationState, library: FeatureLibrary) -> np.ndarray:
    """d2 phi / dx_a dx_b per feature, shape (n_phi, 3, 3, ...)."""
    x = _offsets(state.J1, state.J2, state.J3)
    rows = []
    for e in library.exponents:
        block = []
        for a in range(3):
            line = []
            for c in range(3):
                if a == c:
                    coefficient = e[a] * (e[a] - 1)
                else:
                    coefficient = e[a] * e[c]
                drop = [int(b == a) + int(b == c) for b in range(3)]
                line.append(
                    coefficient
                    * np.prod([_pow(x[b], e[b] - drop[b]) for b in range(3)], axis=0)
                )
            block.append(np.stack(line))
        rows.append(np.stack(block))
    return np.stack(rows)


def feature_stresses(state: DeformationState, library: FeatureLibrary) -> np.ndarray:
    """In-plane d phi_j / dE per feature, shape (n_phi, ..., 2, 2)."""
    derivatives = invariant_derivatives(state)
    gradients = _feature_gradients(state, library)
    stresses = np.einsum("pa...,a...ij->p...ij", gradients, derivatives.first)
    return stresses[..., :2, :2]


def _stress_and_tangent_3d(
    state: DeformationState, params: MaterialParams
) -> Tuple[np.ndarray, np.ndarray]:
    derivatives = invariant_derivatives(state)
    kappa = params.kappa
    gradient = np.einsum("p,pa...->a...", kappa, _feature_gradients(state, params.library))
    hessian = np.einsum("p,pab...->ab...", kappa, _feature_hessians(state, params.library))
    S = np.einsum("a...,a...ij->...ij", gradient, derivatives.first)
    D = np.einsum(
        "ab...,a...ij,b...kl->...ijkl", hessian, derivatives.first, derivatives.first
    ) + np.einsum("a...,a...ijkl->...ijkl", gradient, derivatives.second)
    return S, D


def second_pk_stress(state: DeformationState, params: MaterialParams) -> np.ndarray:
    """In-plane second Piola-Kirchhoff stress dW/dE, shape (..., 2, 2)."""
    S, _ = _stress_and_tangent_3d(state, params)
    return S[..., :2, :2]


def tangent_tensor(state: DeformationState, params: MaterialParams) -> np.ndarray:
    """In-plane material tangent dS/dE as a 4th-order tensor (..., 2, 2, 2, 2)."""
    _, D = _stress_and_tangent_3d(state, params)
    return D[..., :2, :2, :2, :2]


VOIGT_PAIRS: Tuple[Tuple[int, int], ...] = ((0, 0), (1, 1), (0, 1))


def to_voigt(D: np.ndarray) -> np.ndarray:
    out = np.empty(D.shape[:-4] + (3, 3))
    for A, (i, j) in enumerate(VOIGT_PAIRS):
        for B, (k, l) in enumerate(VOIGT_PAIRS):
            out[..., A, B] = D[..., i, j, k, l]
    return out


def material_tangent(state: DeformationState, params: MaterialParams) -> np.ndarray:
    """Material tangent in Voigt order (11, 22, 12), shape (..., 3, 3)."""
    return to_voigt(tangent_tensor(state, params))


def lame_parameters(E: float, nu: float) -> Tuple[float, float]:
    if E <= 0.0:
        raise ConfigError(f"Young's modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise ConfigError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def linear_elastic_stress(strain: np.ndarray, E: float, nu: float) -> np.ndarray:
    """Plane-strain Hooke's law on in-plane strains of shape (..., 2, 2)."""
    lam, mu = lame_parameters(E, nu)
    strain = np.asarray(strain, dtype=float)
    trace = np.trace(strain, axis1=-2, axis2=-1)[..., None, None]
    return lam * trace * _I2 + 2.0 * mu * strain


class HyperelasticMaterial:
    is_linear = False

    def __init__(self, params: MaterialParams) -> None:
        self.params = params

    @property
    def library(self) -> FeatureLibrary:
        return self.params.library

    def first_pk_and_tangent(self, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """P = F S and A_iJkL = delta_ik S_JL + F_iI D_IJKL F_kK."""
        state = DeformationState.from_F(F)
        S3, D3 = _stress_and_tangent_3d(state, self.params)
        S = S3[..., :2, :2]
        D = D3[..., :2, :2, :2, :2]
        P = np.einsum("...iI,...IJ->...iJ", F, S)
        A = np.einsum("ik,...JL->...iJkL", _I2, S) + np.einsum(
            "...iI,...IJKL,...kK->...iJkL", F, D, F
        )
        return P, A

    def first_pk(self, F: np.ndarray) -> np.ndarray:
        state = DeformationState.from_F(F)
        return np.einsum("...iI,...IJ->...iJ", F, second_pk_stress(state, self.params))

    def feature_first_pk(self, F: np.ndarray) -> np.ndarray:
        """F dphi_j/dE per feature, shape (n_phi, ..., 2, 2)."""
        state = DeformationState.from_F(F)
        return np.einsum("...iI,p...IJ->p...iJ", F, feature_stresses(state, self.library))

    def cauchy_stress(self, F: np.ndarray) -> np.ndarray:
        """In-plane Cauchy stress J^-1 F S F^T."""
        state = DeformationState.from_F(F)
        S = second_pk_stress(state, self.params)
        J = np.linalg.det(F)[..., None, None]
        return np.einsum("...iI,...IJ,...jJ->...ij", F, S, F) / J

    def strain_energy(self, F: np.ndarray) -> np.ndarray:
        return strain_energy(DeformationState.from_F(F), self.params)

    def describe(self) -> str:
        return self.params.expression()


class LinearElasticMaterial:
    is_linear = True

    def __init__(self, E: float, nu: float) -> None:
        self.lam, self.mu = lame_parameters(E, nu)
        self.E = E
        self.nu = nu
        self._tangent = self.lam * np.einsum("ij,kl->ijkl", _I2, _I2) + self.mu * (
            np.einsum("ik,jl->ijkl", _I2, _I2) + np.einsum("il,jk->ijkl", _I2, _I2)
        )

    def _strain(self, F: np.ndarray) -> np.ndarray:
        H = np.asarray(F, dtype=float) - _I2
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def first_pk_and_tangent(self, F: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        sigma = linear_elastic_stress(self._strain(F), self.E, self.nu)
        tangent = np.broadcast_to(self._tangent, sigma.shape[:-2] + (2, 2, 2, 2))
        return sigma, tangent

    def first_pk(self, F: np.ndarray) -> np.ndarray:
        return linear_elastic_stress(self._strain(F), self.E, self.nu)

    def cauchy_stress(self, F: np.ndarray) -> np.ndarray:
        return self.first_pk(F)

    def strain_energy(self, F: np.ndarray) -> np.ndarray:
        strain = self._strain(F)
        return 0.5 * np.einsum("...ij,...ij->...", self.first_pk(F), strain)

    def describe(self) -> str:
        return f"linear elastic (E={self.E:g}, nu={self.nu:g})"


Material = Union[HyperelasticMaterial, LinearElasticMaterial]


def as_material(model: Union[MaterialParams, Material]) -> Material:
    if isinstance(model, MaterialParams):
        return HyperelasticMaterial(model)
    return model
