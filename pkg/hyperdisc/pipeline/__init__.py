# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Orchestration of one statFEM-EUCLID iteration as a chain of steps.

Every step receives the loop state and a summary dictionary, and hands both
on to the next step. The summary collects per-iteration diagnostics (hold-out
error, tolerance, step timings) that end up in the discovery history.
"""

import logging
import time
from abc import ABCMeta, abstractmethod
from datetime import timedelta
from typing import Any, Dict, Generic, List, Optional, Sequence, Tuple, TypeVar

log: logging.Logger = logging.getLogger("hyperdisc")

T_in = TypeVar("T_in")
T_out = TypeVar("T_out")

Summary = Dict[str, Any]

STEP_SECONDS = "step_seconds"


def time_str(seconds: float) -> str:
    delta = timedelta(seconds=round(seconds))
    minutes, rest = divmod(int(delta.total_seconds()), 60)
    return f"{minutes}m {rest}s" if minutes else f"{rest}s"


class PipelineStep(Generic[T_in, T_out], metaclass=ABCMeta):
    @abstractmethod
    def run(self, input: T_in, summary: Summary) -> Tuple[T_out, Summary]:
        raise NotImplementedError("PipelineStep.run is abstract")

    @property
    def name(self) -> str:
        return self.__class__.__name__


class Pipeline:
    def __init__(self, steps: Sequence[PipelineStep[Any, Any]]) -> None:
        self.steps: List[PipelineStep[Any, Any]] = list(steps)

    def run(
        self, first_input: Any, summary: Optional[Summary] = None
    ) -> Tuple[Any, Summary]:
        summary = {} if summary is None else summary
        seconds: Dict[str, float] = summary.setdefault(STEP_SECONDS, {})
        value = first_input
        for step in self.steps:
            start = time.perf_counter()
            value, summary = step.run(value, summary)
            seconds[step.name] = seconds.get(step.name, 0.0) + (
                time.perf_counter() - start
            )
        iteration = summary.get("iteration")
        timing = ", ".join(
            f"{name} took {time_str(spent)}" for name, spent in seconds.items()
        )
        log.info(
            "%s step timing: %s",
            "Run" if iteration is None else f"Iteration {iteration}",
            timing,
        )
        return value, summary


def total_seconds(summary: Summary) -> float:
    return float(sum(summary.get(STEP_SECONDS, {}).values()))
