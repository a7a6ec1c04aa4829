# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Gaussian conditioning of a forecast displacement field on sensor data."""

import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence, Union

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.spatial.distance
import zstandard
from scipy import sparse

from .errors import ConfigError, PosteriorError
from .mesh import DIM, SensorSet

log: logging.Logger = logging.getLogger("hyperdisc")

MEAN_FILE = "mean.csv"
COVARIANCE_FILE = "covariance.npy.zst"
MANIFEST_FILE = "manifest.json"


@dataclass(frozen=True, eq=False)
class GaussianField:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ConfigError(
                f"covariance shape {cov.shape} does not match mean length {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def size(self) -> int:
        return int(self.mean.size)

    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def save(self, directory: Union[str, Path]) -> None:
        """Mean as CSV, covariance as a zstandard-compressed .npy, plus a manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({"dof": np.arange(self.size), "mean": self.mean}).to_csv(
            directory / MEAN_FILE, index=False, float_format="%.17g"
        )
        compressor = zstandard.ZstdCompressor()
        with open(directory / COVARIANCE_FILE, "wb") as handle:
            with compressor.stream_writer(handle) as writer:
                np.save(writer, self.cov, allow_pickle=False)
        manifest = {
            "n_gdof": self.size,
            "ordering": "node-interleaved (x, y)",
            "mean": MEAN_FILE,
            "covariance": COVARIANCE_FILE,
        }
        (directory / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2))

    @staticmethod
    def load(directory: Union[str, Path]) -> "GaussianField":
        directory = Path(directory)
        manifest = json.loads((directory / MANIFEST_FILE).read_text())
        mean = pd.read_csv(directory / manifest["mean"]).sort_values("dof")["mean"]
        decompressor = zstandard.ZstdDecompressor()
        with open(directory / manifest["covariance"], "rb") as handle:
            with decompressor.stream_reader(handle) as reader:
                # np.load seeks backwards, which the stream reader cannot do
                cov = np.load(io.BytesIO(reader.read()), allow_pickle=False)
        return GaussianField(mean.to_numpy(dtype=float), cov)


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Stacked sensor readings.

    ``y`` has shape (n_r, n_gsen); ``H`` selects the observed DOFs.
    """

    H: sparse.csr_matrix
    y: np.ndarray
    sigma_e: float
    n_r: int = 1

    def __post_init__(self) -> None:
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if y.shape[0] != self.n_r:
            raise ConfigError(f"expected {self.n_r} readings, got {y.shape[0]}")
        if y.shape[1] != self.H.shape[0]:
            raise ConfigError(
                f"reading length {y.shape[1]} does not match {self.H.shape[0]} observed DOFs"
            )
        if self.sigma_e <= 0.0:
            raise ConfigError(f"sigma_e must be positive, got {self.sigma_e}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "H", sparse.csr_matrix(self.H))

    @property
    def n_gsen(self) -> int:
        return int(self.H.shape[0])

    @property
    def y_sum(self) -> np.ndarray:
        return self.y.sum(axis=0)

    @property
    def y_mean(self) -> np.ndarray:
        return self.y.mean(axis=0)

    @staticmethod
    def from_sensors(
        sensors: SensorSet,
        n_gdof: int,
        y: np.ndarray,
        sigma_e: float,
        n_r: int = 1,
    ) -> "ObservationSet":
        return ObservationSet(
            H=selection_matrix(sensors.dof_indices, n_gdof),
            y=y,
            sigma_e=sigma_e,
            n_r=n_r,
        )


def selection_matrix(dofs: Sequence[int], n_gdof: int) -> sparse.csr_matrix:
    dofs = np.asarray(dofs, dtype=int)
    return sparse.csr_matrix(
        (np.ones(dofs.size), (np.arange(dofs.size), dofs)), shape=(dofs.size, n_gdof)
    )


def _is_positive_definite(M: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def nearest_spd(M: np.ndarray) -> np.ndarray:
    """Nearest symmetric positive definite matrix in the Frobenius norm.

    Symmetrize, average with the symmetric polar factor, then add the smallest
    diagonal shift (doubled from machine-epsilon scale) that lets Cholesky
    succeed.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ConfigError(f"nearest_spd needs a square matrix, got {M.shape}")
    if np.array_equal(M, M.T) and _is_positive_definite(M):
        return M

    B = 0.5 * (M + M.T)
    _, s, Vt = np.linalg.svd(B)
    H = Vt.T @ np.diag(s) @ Vt
    A = 0.5 * (B + H)
    A = 0.5 * (A + A.T)
    if _is_positive_definite(A):
        return A

    identity = np.eye(A.shape[0])
    scale = max(float(np.abs(A).max()), 1.0)
    delta = np.finfo(float).eps * scale
    while not _is_positive_definite(A + delta * identity):
        delta *= 2.0
    log.debug("nearest_spd applied diagonal shift %.3e", delta)
    return A + delta * identity


def squared_exponential_covariance(
    nodes: np.ndarray,
    sigma: float,
    length: float,
    fixed_dofs: Sequence[int] = (),
) -> np.ndarray:
    """Model-discrepancy covariance over node-interleaved DOFs.

    The x and y components are independent Gaussian processes with kernel
    sigma^2 exp(-|X - X'|^2 / (2 length^2)). Rows and columns of
    ``fixed_dofs`` are zero, so Dirichlet values stay exact.
    """
    if sigma < 0.0:
        raise ConfigError(f"discrepancy sigma must be >= 0, got {sigma}")
    if length <= 0.0:
        raise ConfigError(f"discrepancy length must be positive, got {length}")
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    distance = scipy.spatial.distance.cdist(nodes, nodes, "sqeuclidean")
    kernel = sigma ** 2 * np.exp(-0.5 * distance / length ** 2)
    cov = np.kron(kernel, np.eye(DIM))
    fixed = np.asarray(fixed_dofs, dtype=int)
    cov[fixed, :] = 0.0
    cov[:, fixed] = 0.0
    return cov


def with_discrepancy(prior: GaussianField, discrepancy: np.ndarray) -> GaussianField:
    """Forecast plus an independent zero-mean model error."""
    return GaussianField(prior.mean, prior.cov + discrepancy)


def posterior_update(prior: GaussianField, obs: ObservationSet) -> GaussianField:
    """Condition the forecast on the readings.

    Evaluates C_ua = (n_r H^T C_e^-1 H + C_uf^-1)^-1 and
    mu_ua = C_ua (H^T C_e^-1 sum(y) + C_uf^-1 mu_uf) through the Cholesky
    factor L of the repaired prior, which avoids inverting C_uf:
    C_ua = L (I + n_r/s^2 L^T H^T H L)^-1 L^T.
    """
    if obs.H.shape[1] != prior.size:
        raise ConfigError(
            f"observation matrix has {obs.H.shape[1]} columns, field has {prior.size} DOFs"
        )
    C = nearest_spd(prior.cov)
    L = np.linalg.cholesky(C)
    noise_precision = 1.0 / obs.sigma_e ** 2
    HL = obs.H @ L
    M = np.eye(prior.size) + obs.n_r * noise_precision * (HL.T @ HL)
    # M = I + PSD, so its spectrum lies in [1, 1 + trace(PSD)]
    condition = float(1.0 + obs.n_r * noise_precision * np.sum(HL ** 2))
    if not np.isfinite(condition) or condition > 1.0 / np.finfo(float).eps:
        raise PosteriorError("posterior system is singular", condition)
    try:
        factor = scipy.linalg.cho_factor(M)
    except np.linalg.LinAlgError:
        raise PosteriorError("posterior system is not positive definite", condition)
    X = scipy.linalg.cho_solve(factor, L.T)
    cov = L @ X
    cov = 0.5 * (cov + cov.T)
    innovation = obs.y_sum - obs.n_r * (obs.H @ prior.mean)
    mean = prior.mean + cov @ (obs.H.T @ (noise_precision * innovation))
    return GaussianField(mean, cov)


def kalman_gain_update(prior: GaussianField, obs: ObservationSet) -> GaussianField:
    """Gain form K = C H^T (H C H^T + C_e / n_r)^-1 on the averaged reading."""
    C = nearest_spd(prior.cov)
    H = obs.H.toarray()
    S = H @ C @ H.T + (obs.sigma_e ** 2 / obs.n_r) * np.eye(obs.n_gsen)
    K = np.linalg.solve(S, H @ C).T
    mean = prior.mean + K @ (obs.y_mean - H @ prior.mean)
    cov = C - K @ H @ C
    return GaussianField(mean, 0.5 * (cov + cov.T))


class SensorPrediction(NamedTuple):
    mean: np.ndarray
    cov: np.ndarray


def predict_at_sensors(
    posterior: GaussianField, H: Union[sparse.spmatrix, np.ndarray]
) -> SensorPrediction:
    H = sparse.csr_matrix(H)
    mean = H @ posterior.mean
    cov = (H @ (H @ posterior.cov).T).T
    return SensorPrediction(mean=np.asarray(mean), cov=0.5 * (cov + cov.T))


def rmse_sensors(mu_z: np.ndarray, y: np.ndarray, n_sen: int) -> float:
    mu_z = np.asarray(mu_z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if mu_z.shape != y.shape:
        raise ConfigError(f"length mismatch: {mu_z.size} predictions, {y.size} readings")
    if n_sen < 1:
        raise ConfigError("n_sen must be >= 1")
    return float(np.sqrt(np.sum((mu_z - y) ** 2) / n_sen))


def default_tolerance(sigma: float, floor: float = 0.0) -> float:
    """Noise-level convergence threshold for the sensor RMSE.

    ``sigma`` is the noise level the assimilation assumes, so noiseless data
    get a threshold at the likelihood floor rather than below the surrogate
    error of the forecast.
    """
    return max(1.05 * sigma * np.sqrt(DIM), floor)
