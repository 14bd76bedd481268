"""Communication/time accounting and the accuracy-per-cost metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import UsageError
from .model import ModelParams, predict

__all__ = [
    "BYTES_PER_MB",
    "ACCURACY_BYTES",
    "CostReport",
    "model_bytes",
    "traffic_for_round",
    "kappa",
    "rho_metric",
    "per_class_accuracy",
    "cost_report",
]

BYTES_PER_MB = 1_000_000
# accuracy scalar uploaded next to each FNR model
ACCURACY_BYTES = 8


@dataclass
class CostReport:
    traffic_bytes: int
    wall_seconds: float
    accuracy: float
    kappa: float
    rho: float
    traffic_mb: float
    per_class: dict = field(default_factory=dict)

    def summary_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "traffic_mb": self.traffic_mb,
            "time_s": self.wall_seconds,
            "kappa": self.kappa,
            "rho": self.rho,
            "per_class": {str(k): v for k, v in self.per_class.items()},
        }


def model_bytes(params: ModelParams, wire_bytes: int = 4) -> int:
    return params.size * wire_bytes


def traffic_for_round(
    n: int,
    algorithm: str,
    model_size_bytes: int,
    table_bytes: Union[int, Sequence[int]] = 0,
    count_tables: bool = True,
) -> tuple[int, int]:
    """``(up, down)`` bytes for one round with every participant active.

    Down-link is one model broadcast per participant. FNR-FL up-links add
    each participant's norm-table payload and an accuracy scalar unless
    ``count_tables`` is false. ``table_bytes`` is a single size or one size
    per participant.
    """
    if model_size_bytes <= 0 or n < 1:
        raise UsageError("model size and participant count must be positive")
    down = n * model_size_bytes
    up = n * model_size_bytes
    if algorithm == "fnr" and count_tables:
        if isinstance(table_bytes, (int, np.integer)):
            up += n * (int(table_bytes) + ACCURACY_BYTES)
        else:
            if len(table_bytes) != n:
                raise UsageError(f"need {n} table sizes, got {len(table_bytes)}")
            up += int(sum(table_bytes)) + n * ACCURACY_BYTES
    return up, down


def kappa(accuracy: float, wall_seconds: float) -> float:
    """Accuracy x 10^4 per second of training time."""
    if not wall_seconds > 0:
        raise UsageError(f"time must be positive, got {wall_seconds}")
    return accuracy * 1e4 / wall_seconds


def rho_metric(accuracy: float, traffic_mb: float) -> float:
    """Accuracy x 10^4 per MB of cumulative traffic."""
    if not traffic_mb > 0:
        raise UsageError(f"traffic must be positive, got {traffic_mb}")
    return accuracy * 1e4 / traffic_mb


def per_class_accuracy(params: ModelParams, dataset) -> dict[int, float]:
    """Fraction of correct predictions within each class that has samples."""
    labels = np.asarray(dataset.labels, dtype=np.int64)
    correct = predict(params, dataset.inputs) == labels
    return {int(c): float(np.mean(correct[labels == c])) for c in np.unique(labels)}


def cost_report(
    accuracy: float,
    traffic_bytes: int,
    wall_seconds: float,
    per_class: Mapping[int, float] = None,
) -> CostReport:
    mb = traffic_bytes / BYTES_PER_MB
    return CostReport(
        traffic_bytes=int(traffic_bytes),
        wall_seconds=float(wall_seconds),
        accuracy=float(accuracy),
        kappa=kappa(accuracy, wall_seconds),
        rho=rho_metric(accuracy, mb),
        traffic_mb=mb,
        per_class=dict(per_class or {}),
    )
