"""Feature norms, class-average norm tables and cross-participant differences."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigurationError, ProtocolError, UsageError
from .model import ModelParams, _features

__all__ = [
    "ClassNormTable",
    "NormDiffTable",
    "sample_feature_norm",
    "feature_norms",
    "class_average_norms",
    "norm_differences",
]


@dataclass(frozen=True)
class ClassNormTable:
    """Average feature norm and sample count per class present in a dataset."""

    avg: Mapping[int, float]
    count: Mapping[int, int]

    def __post_init__(self):
        if set(self.avg) != set(self.count):
            raise ConfigurationError("avg and count must have the same classes")
        if any(v < 0 for v in self.avg.values()) or any(c <= 0 for c in self.count.values()):
            raise ConfigurationError("norms must be >= 0 and counts > 0")
        object.__setattr__(self, "avg", {int(k): float(self.avg[k]) for k in sorted(self.avg)})
        object.__setattr__(self, "count", {int(k): int(self.count[k]) for k in sorted(self.count)})

    def __contains__(self, label) -> bool:
        return label in self.avg

    def __getitem__(self, label) -> float:
        return self.avg[label]

    def keys(self):
        return self.avg.keys()

    def to_json(self) -> dict:
        return {
            "avg": {str(k): v for k, v in self.avg.items()},
            "count": {str(k): v for k, v in self.count.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClassNormTable":
        return cls({int(k): v for k, v in obj["avg"].items()}, {int(k): v for k, v in obj["count"].items()})

    def payload(self) -> bytes:
        """The exact bytes uploaded to the server."""
        return json.dumps(self.to_json(), separators=(",", ":")).encode()


@dataclass(frozen=True)
class NormDiffTable:
    """Per-label sum of (reference norm - own norm) over reference participants.

    ``ref_sum[l]`` and ``ref_count[l]`` keep the frozen reference side so the
    difference can be recomputed against fresh own norms during training:
    ``delta[l] == ref_sum[l] - ref_count[l] * own[l]``.
    """

    delta: Mapping[int, float]
    ref_sum: Mapping[int, float] = field(default_factory=dict)
    ref_count: Mapping[int, int] = field(default_factory=dict)


def sample_feature_norm(params: ModelParams, x: np.ndarray) -> float:
    """L2 norm of the feature-extractor output for a single sample ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != params.dims[0]:
        raise ConfigurationError(f"sample width {x.shape[1]} does not match d_in={params.dims[0]}")
    return float(np.linalg.norm(_features(params, x)[1][0]))


def feature_norms(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Row-wise feature norms for a matrix of samples."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != params.dims[0]:
        raise ConfigurationError(f"inputs {inputs.shape} do not match d_in={params.dims[0]}")
    return np.linalg.norm(_features(params, inputs)[1], axis=1)


def class_average_norms(params: ModelParams, dataset, batch_size: int = 32) -> ClassNormTable:
    """Mean feature norm per class, accumulated batch by batch.

    Classes without samples are left out. Sums are accumulated per class in
    sample order, so the result does not depend on ``batch_size``.
    """
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if labels.size == 0:
        raise UsageError("class_average_norms needs a non-empty dataset")
    if batch_size < 1:
        raise UsageError("batch_size must be >= 1")
    norms = np.empty(labels.size)
    for start in range(0, labels.size, batch_size):
        stop = start + batch_size
        norms[start:stop] = feature_norms(params, dataset.inputs[start:stop])
    avg, count = {}, {}
    for c in np.unique(labels):
        sel = norms[labels == c]
        avg[int(c)] = float(np.mean(sel))
        count[int(c)] = int(sel.size)
    return ClassNormTable(avg, count)


def norm_differences(
    j,
    all_ids: Iterable,
    regularized_ids: Iterable,
    tables: Mapping[object, ClassNormTable],
) -> NormDiffTable:
    """Sum over references ``m`` of ``tables[m][l] - tables[j][l]`` for each of ``j``'s labels.

    References are ``all_ids - regularized_ids``; a reference that lacks
    label ``l`` contributes nothing for that label.
    """
    all_ids = set(all_ids)
    regularized_ids = set(regularized_ids)
    if j not in regularized_ids:
        raise ProtocolError(f"participant {j} is not in the regularized set")
    if not regularized_ids <= all_ids:
        raise ProtocolError("regularized set must be a subset of all participants")
    refs = sorted(all_ids - regularized_ids)
    if not refs:
        raise ProtocolError("no reference participants: every participant is regularized")
    missing = [m for m in all_ids if m not in tables]
    if missing:
        raise ProtocolError(f"no norm table for participants {sorted(missing)}")
    own = tables[j]
    delta, ref_sum, ref_count = {}, {}, {}
    for label in own.keys():
        d, s, c = 0.0, 0.0, 0
        for m in refs:
            if label in tables[m]:
                d += tables[m][label] - own[label]
                s += tables[m][label]
                c += 1
        delta[label], ref_sum[label], ref_count[label] = d, s, c
    return NormDiffTable(delta, ref_sum, ref_count)
