# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Run directories.

Every command writes into one output directory: the resolved configuration,
CSV tables and JSON documents. Re-running from ``config.json`` reproduces the
directory.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Mapping, Union

import numpy as np
import pandas as pd

from .config import BenchmarkConfig
from .constitutive import FeatureLibrary, MaterialParams
from .errors import ConfigError
from .euclid import DiscoveredModel, pareto_to_frame
from .mesh import Mesh, SensorSet
from .pipeline.loop import DiscoveryHistory

log: logging.Logger = logging.getLogger("hyperdisc")

CONFIG_FILE = "config.json"
HISTORY_FILE = "history.csv"
MODEL_FILE = "discovered_model.json"
METRICS_FILE = "metrics.json"
READINGS_FILE = "y.csv"
SENSORS_FILE = "sensors.json"


def _clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars and arrays become Python values, NaN None."""
    if isinstance(value, Mapping):
        return {str(key): _clean(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(item) for item in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, np.generic):
        return _clean(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class RunDirectory:
    def __init__(self, path: Union[str, Path]) -> None:
        self.path: Path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)

    def file(self, name: str) -> Path:
        return self.path / name

    def write_json(self, name: str, document: Any) -> Path:
        target = self.file(name)
        target.write_text(json.dumps(_clean(document), indent=2, sort_keys=True) + "\n")
        log.debug("Wrote %s", target)
        return target

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        target = self.file(name)
        frame.to_csv(target, index=False, float_format="%.17g")
        log.debug("Wrote %s", target)
        return target

    def write_config(self, config: BenchmarkConfig) -> str:
        """Resolved config plus its fingerprint; returns the fingerprint."""
        self.file(CONFIG_FILE).write_text(config.to_json() + "\n")
        fingerprint = config.fingerprint()
        self.file("fingerprint").write_text(fingerprint + "\n")
        return fingerprint

    def write_readings(self, y: np.ndarray, sensors: SensorSet, mesh: Mesh) -> None:
        """One row per observed DOF, one column per reading."""
        y = np.atleast_2d(y)
        nodes = np.repeat(sensors.node_indices, 2)
        frame = pd.DataFrame(
            {
                "sensor": np.repeat(np.arange(sensors.n_sen), 2),
                "node": nodes,
                "component": np.tile(["x", "y"], sensors.n_sen),
                "x": mesh.nodes[nodes, 0],
                "y": mesh.nodes[nodes, 1],
            }
        )
        for reading in range(y.shape[0]):
            frame[f"y{reading}"] = y[reading]
        self.write_frame(READINGS_FILE, frame)
        self.write_json(SENSORS_FILE, sensors.to_json())

    def write_model(self, model: DiscoveredModel, label: str = "") -> Path:
        document = model_document(model)
        if label:
            document["method"] = label
        return self.write_json(MODEL_FILE, document)

    def write_history(self, history: DiscoveryHistory, library: FeatureLibrary) -> None:
        """history.csv plus one Pareto table per iteration that ran a regression."""
        self.write_frame(HISTORY_FILE, history.to_frame())
        for record in history.records:
            if record.pareto_path:
                self.write_frame(
                    f"pareto_iter{record.iteration}.csv",
                    pareto_to_frame(record.pareto_path, library),
                )

    def write_metrics(self, metrics: Dict[str, Any]) -> Path:
        return self.write_json(METRICS_FILE, metrics)


def model_document(model: DiscoveredModel) -> Dict[str, Any]:
    names = model.library.names()
    document = model.params.to_json()
    document.update(
        {
            "expression": model.expression(),
            "lambda_star": model.lambda_star,
            "active_set": [names[index] for index in model.active_set],
            "rmse_star": model.rmse_star,
            "metadata": model.metadata,
        }
    )
    return document


def read_model(path: Union[str, Path]) -> MaterialParams:
    """Coefficients from a discovered-model document or a bare coefficient file."""
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as error:
        raise ConfigError(f"{path} is not valid JSON: {error}")
    try:
        if isinstance(document, Mapping) and "coefficients" not in document:
            return MaterialParams.from_named(document)
        return MaterialParams.from_json(document)
    except (KeyError, TypeError, ValueError) as error:
        raise ConfigError(f"{path} does not describe a model: {error}")

