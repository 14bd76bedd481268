"""Two-stage feed-forward network: a ReLU feature extractor and a linear classifier.

Tensors are plain ``float64`` numpy arrays. A model is split into the
feature-extractor part (``feature_weights``, ``feature_bias``) and the
classifier part (``classifier_weights``, ``classifier_bias``); the hidden
ReLU activation is what the rest of the package calls "the features" of a
sample.

All functions are pure: they never modify their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, UsageError

__all__ = [
    "Batch",
    "ModelParams",
    "Gradients",
    "ForwardResult",
    "init_params",
    "forward",
    "cross_entropy",
    "loss_and_grad",
    "backward",
    "sgd_step",
    "predict",
    "evaluate",
]

PARAM_NAMES = ("feature_weights", "feature_bias", "classifier_weights", "classifier_bias")


@dataclass(frozen=True)
class _ParamSet:
    feature_weights: np.ndarray
    feature_bias: np.ndarray
    classifier_weights: np.ndarray
    classifier_bias: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            arr = np.array(getattr(self, f.name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, f.name, arr)
        d_in, d_h = self.feature_weights.shape
        d_h2, k = self.classifier_weights.shape
        if (
            d_h2 != d_h
            or self.feature_bias.shape != (d_h,)
            or self.classifier_bias.shape != (k,)
        ):
            raise ConfigurationError(
                "inconsistent parameter shapes: "
                + ", ".join(f"{n}={getattr(self, n).shape}" for n in PARAM_NAMES)
            )

    @property
    def dims(self) -> tuple[int, int, int]:
        """``(d_in, d_h, k)``."""
        d_in, d_h = self.feature_weights.shape
        return d_in, d_h, self.classifier_weights.shape[1]

    def tensors(self) -> tuple[np.ndarray, ...]:
        return tuple(getattr(self, n) for n in PARAM_NAMES)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.tensors())

    def map(self, fn: Callable[..., np.ndarray], *others: "_ParamSet"):
        """Apply ``fn`` tensor-wise across this set and ``others``."""
        out = [fn(*ts) for ts in zip(self.tensors(), *(o.tensors() for o in others))]
        return type(self)(*out)

    @property
    def size(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(t.size for t in self.tensors()))

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    @classmethod
    def unflatten(cls, flat: np.ndarray, dims: tuple[int, int, int]):
        d_in, d_h, k = dims
        shapes = [(d_in, d_h), (d_h,), (d_h, k), (k,)]
        flat = np.asarray(flat, dtype=np.float64).reshape(-1)
        expected = sum(int(np.prod(s)) for s in shapes)
        if flat.size != expected:
            raise ConfigurationError(f"flat vector has {flat.size} entries, expected {expected}")
        out, pos = [], 0
        for shape in shapes:
            n = int(np.prod(shape))
            out.append(flat[pos : pos + n].reshape(shape))
            pos += n
        return cls(*out)

    def bit_equal(self, other: "_ParamSet") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors()))


class ModelParams(_ParamSet):
    """Feature-extractor plus classifier parameters of one model."""


class Gradients(_ParamSet):
    """Gradient of a scalar loss with respect to every tensor of a :class:`ModelParams`."""


@dataclass(frozen=True)
class Batch:
    """A mini-batch: inputs ``[B, d_in]`` and integer labels ``[B]``."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2:
            raise ConfigurationError(f"batch inputs must be 2-D, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise ConfigurationError(f"{x.shape[0]} inputs but {y.shape[0]} labels")
        if x.shape[0] < 1:
            raise ConfigurationError("a batch needs at least one sample")
        if np.any(y < 0):
            raise ConfigurationError("labels must be non-negative")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]


class ForwardResult(NamedTuple):
    features: np.ndarray
    logits: np.ndarray


def init_params(d_in: int, d_h: int, k: int, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    if min(d_in, d_h, k) < 1:
        raise ConfigurationError(f"all dimensions must be >= 1, got ({d_in}, {d_h}, {k})")
    rng = np.random.default_rng(seed)
    s1 = np.sqrt(6.0 / (d_in + d_h))
    s2 = np.sqrt(6.0 / (d_h + k))
    return ModelParams(
        rng.uniform(-s1, s1, size=(d_in, d_h)),
        np.zeros(d_h),
        rng.uniform(-s2, s2, size=(d_h, k)),
        np.zeros(k),
    )


def _check_batch(params: _ParamSet, batch) -> None:
    d_in, _, k = params.dims
    x = batch.inputs
    if x.ndim != 2 or x.shape[1] != d_in:
        raise ConfigurationError(f"input width {x.shape[-1]} does not match d_in={d_in}")
    if len(batch.labels) and int(np.max(batch.labels)) >= k:
        raise ConfigurationError(f"label {int(np.max(batch.labels))} out of range for k={k}")


def _features(params: _ParamSet, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pre = x @ params.feature_weights + params.feature_bias
    return pre, np.maximum(pre, 0.0)


def forward(params: ModelParams, batch) -> ForwardResult:
    """Features ``relu(x W_f + b_f)`` and logits ``features W_c + b_c``.

    ``batch`` is anything with ``inputs`` and ``labels`` attributes
    (a :class:`Batch` or a dataset).
    """
    _check_batch(params, batch)
    _, h = _features(params, batch.inputs)
    logits = h @ params.classifier_weights + params.classifier_bias
    return ForwardResult(h, logits)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy(logits: np.ndarray, labels: Sequence[int]) -> float:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise UsageError("cross_entropy needs a non-empty [B, k] logit matrix")
    logp = _log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def _norm_direction(h: np.ndarray) -> np.ndarray:
    # d||h||/dh; zero (a valid subgradient) where the feature vector vanishes
    norms = np.linalg.norm(h, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, h / safe, 0.0)


def loss_and_grad(
    params: ModelParams,
    batch,
    extra_norm_grad: Optional[np.ndarray] = None,
) -> tuple[float, Gradients]:
    """Mean cross-entropy of ``batch`` and its gradient.

    ``extra_norm_grad[s]`` is the derivative of an additional penalty with
    respect to the feature norm ``||h_s||`` of sample ``s``; it is chained
    through ``h_s / ||h_s||`` into the feature extractor. The returned loss
    is the cross-entropy alone: the caller owns the penalty value.
    """
    _check_batch(params, batch)
    x, y = batch.inputs, batch.labels
    n = x.shape[0]
    pre, h = _features(params, x)
    logits = h @ params.classifier_weights + params.classifier_bias
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), y].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    g_cw = h.T @ dlogits
    g_cb = dlogits.sum(axis=0)
    dh = dlogits @ params.classifier_weights.T
    if extra_norm_grad is not None:
        w = np.asarray(extra_norm_grad, dtype=np.float64).reshape(n, 1)
        dh = dh + w * _norm_direction(h)
    dpre = dh * (pre > 0.0)
    g_fw = x.T @ dpre
    g_fb = dpre.sum(axis=0)
    return loss, Gradients(g_fw, g_fb, g_cw, g_cb)


def backward(
    params: ModelParams,
    batch,
    extra_norm_grad: Optional[np.ndarray] = None,
) -> Gradients:
    """Gradient of the mean batch cross-entropy (plus the optional norm path)."""
    return loss_and_grad(params, batch, extra_norm_grad)[1]


def sgd_step(params: ModelParams, grads: _ParamSet, eta: float) -> ModelParams:
    """``params - eta * grads``, tensor by tensor."""
    if eta < 0:
        raise UsageError(f"learning rate must be non-negative, got {eta}")
    out = params.map(lambda p, g: p - eta * g, grads)
    if not all(np.all(np.isfinite(t)) for t in out.tensors()):
        raise FloatingPointError("SGD step produced non-finite parameters")
    return ModelParams(*out.tensors())


def predict(params: ModelParams, inputs: np.ndarray) -> np.ndarray:
    """Arg-max class per row; ties go to the lower class index."""
    x = np.asarray(inputs, dtype=np.float64)
    _, h = _features(params, x)
    return np.argmax(h @ params.classifier_weights + params.classifier_bias, axis=1)


def evaluate(params: ModelParams, dataset) -> float:
    """Fraction of samples in ``dataset`` whose predicted class equals the label."""
    if len(dataset.labels) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    _check_batch(params, dataset)
    return float(np.mean(predict(params, dataset.inputs) == np.asarray(dataset.labels)))
