# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

from typing import Optional

from typing_extensions import Final

CONFIG_ERROR: Final[int] = 2
NUMERICAL_ERROR: Final[int] = 3
NO_ADMISSIBLE_MODEL: Final[int] = 4


class DiscoveryError(Exception):
    exit_code: int = 1

    def __init__(self, message: str, exit_code: Optional[int] = None) -> None:
        super().__init__(message)
        self.message = message
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.message


class ConfigError(DiscoveryError):
    exit_code = CONFIG_ERROR


class SensorCollisionError(ConfigError):
    pass


class NumericalError(DiscoveryError):
    exit_code = NUMERICAL_ERROR


class MeshError(NumericalError):
    def __init__(self, message: str, element: Optional[int] = None) -> None:
        raw = message
        if element is not None:
            message = f"{message} (element {element})"
        super().__init__(message)
        # constructor arguments, so the error unpickles in the parent process
        self.args = (raw, element)
        self.element = element


class InvertedElementError(MeshError):
    pass


class NewtonDivergenceError(NumericalError):
    def __init__(self, message: str, residual: float) -> None:
        super().__init__(f"{message}; last residual norm {residual:.3e}")
        self.args = (message, residual)
        self.residual = residual


class RankDeficientError(NumericalError):
    pass


class PosteriorError(NumericalError):
    def __init__(self, message: str, condition: float) -> None:
        super().__init__(f"{message}; condition estimate {condition:.3e}")
        self.args = (message, condition)
        self.condition = condition


class LassoConvergenceError(NumericalError):
    def __init__(
        self, message: str, kkt_residual: float, lam: Optional[float] = None
    ) -> None:
        text = f"{message}; final KKT residual {kkt_residual:.3e}"
        if lam is not None:
            text = f"{text} at lambda={lam:.6e}"
        super().__init__(text)
        self.args = (message, kkt_residual, lam)
        self.kkt_residual = kkt_residual
        self.lam = lam


class NoAdmissibleModelError(DiscoveryError):
    exit_code = NO_ADMISSIBLE_MODEL

    def __init__(self, message: str, best_rmse: float) -> None:
        super().__init__(
            f"{message}; best achieved RMSE {best_rmse:.6g}. "
            "Consider adding sensors or sensor readings."
        )
        self.args = (message, best_rmse)
        self.best_rmse = best_rmse


class InsufficientSensorsError(DiscoveryError):
    exit_code = NO_ADMISSIBLE_MODEL
