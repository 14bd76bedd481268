"""FNR-FL rounds plus FedAvg and FedProx baselines.

One round: the server broadcasts the global model, every participant trains
locally and reports its public-set accuracy and class-average feature
norms, the ``floor(n * p)`` least accurate participants are refined on the
public set with a feature-norm penalty, and the server takes the
size-weighted average.

Randomness is drawn from counter-derived substreams keyed on
``(seed, stage, round, participant, epoch)`` so that results do not depend
on the order in which participants are executed.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, ProtocolError, UsageError
from .metrics import model_bytes, traffic_for_round
from .model import (
    Batch,
    Gradients,
    ModelParams,
    _features,
    cross_entropy,
    evaluate,
    init_params,
    loss_and_grad,
    sgd_step,
)
from .norms import ClassNormTable, NormDiffTable, class_average_norms, norm_differences
from .partition import Dataset, PartitionPlan

log = logging.getLogger(__name__)

__all__ = [
    "ALGORITHMS",
    "PENALTIES",
    "FederationConfig",
    "RoundReport",
    "LocalResult",
    "iter_batches",
    "local_training",
    "fedprox_local_training",
    "prox_loss_and_grad",
    "select_regularized",
    "regularized_loss",
    "feature_norm_regularize",
    "aggregate_weighted",
    "run_federation",
    "write_jsonl",
    "read_jsonl",
]

ALGORITHMS = ("fnr", "fedavg", "fedprox")
PENALTIES = ("signed", "squared")

_STAGE_LOCAL = 1
_STAGE_REG = 2


@dataclass(frozen=True)
class FederationConfig:
    n: int = 10
    rounds: int = 10
    local_epochs: int = 10
    reg_epochs: int = 5
    eta: float = 0.1
    lam: float = 0.1
    p: float = 0.3
    train_batch: int = 64
    test_batch: int = 32
    algorithm: str = "fnr"
    prox_mu: float = 0.01
    penalty: str = "signed"
    seed: int = 0
    hidden: int = 32
    wire_bytes: int = 4
    count_tables: bool = True
    # constant-penalty arithmetic with no gradient through the norms
    frozen_norms: bool = False

    def __post_init__(self):
        if self.n < 2:
            raise ConfigurationError(f"n must be >= 2, got {self.n}")
        if self.rounds < 1:
            raise ConfigurationError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_epochs < 0 or self.reg_epochs < 0:
            raise ConfigurationError("epoch counts must be >= 0")
        if not 0.0 <= self.p < 1.0:
            raise ConfigurationError(f"p must lie in [0, 1), got {self.p}")
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be > 0, got {self.eta}")
        if self.lam < 0 or self.prox_mu < 0:
            raise ConfigurationError("lambda and prox_mu must be >= 0")
        if self.train_batch < 1 or self.test_batch < 1 or self.hidden < 1 or self.wire_bytes < 1:
            raise ConfigurationError("batch sizes, hidden width and wire bytes must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.penalty not in PENALTIES:
            raise ConfigurationError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")

    def replace(self, **changes) -> "FederationConfig":
        return FederationConfig(**{**asdict(self), **changes})

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class RoundReport:
    round: int
    global_acc: float
    acc: list
    loss: list
    s_re: list
    up_bytes: int
    down_bytes: int
    wall_s: float
    # post-refinement public accuracy of each regularized participant
    refined_acc: dict = field(default_factory=dict)
    global_params: Optional[ModelParams] = field(default=None, repr=False)

    JSON_KEYS = ("round", "global_acc", "acc", "loss", "s_re", "up_bytes", "down_bytes", "wall_s")

    def to_json(self, include_timing: bool = True) -> dict:
        out = {k: getattr(self, k) for k in self.JSON_KEYS}
        if not include_timing:
            out["wall_s"] = 0.0
        return out

    def same_trajectory(self, other: "RoundReport") -> bool:
        """Equality of everything except wall-clock time."""
        a, b = self.to_json(False), other.to_json(False)
        return a == b


class LocalResult(NamedTuple):
    params: ModelParams
    table: Optional[ClassNormTable]
    accuracy: float
    loss: float


def _rng(seed: int, stage: int, round_index: int, epoch: int) -> np.random.Generator:
    # shuffles do not depend on the participant id, so two participants
    # holding identical data train identically
    return np.random.default_rng([int(seed), stage, int(round_index), int(epoch)])


def iter_batches(data: Dataset, batch_size: int, rng: Optional[np.random.Generator] = None):
    """Consecutive mini-batches of ``data``, shuffled by ``rng`` if given."""
    order = np.arange(len(data)) if rng is None else rng.permutation(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield Batch(data.inputs[idx], data.labels[idx])


def prox_loss_and_grad(
    params: ModelParams,
    batch: Batch,
    global_params: ModelParams,
    prox_mu: float,
) -> tuple[float, Gradients]:
    """Cross-entropy plus ``prox_mu / 2 * ||w - w_global||^2``."""
    ce, grads = loss_and_grad(params, batch)
    if prox_mu == 0:
        return ce, grads
    diff = params.map(lambda w, g: w - g, global_params)
    penalty = 0.5 * prox_mu * float(sum(np.sum(d * d) for d in diff.tensors()))
    return ce + penalty, grads.map(lambda g, d: g + prox_mu * d, diff)


def _train(i, global_params, local_data, cfg, round_index, prox_mu):
    if len(local_data) == 0:
        raise UsageError(f"participant {i} has no local data")
    params = global_params
    losses = []
    for epoch in range(cfg.local_epochs):
        rng = _rng(cfg.seed, _STAGE_LOCAL, round_index, epoch)
        for batch in iter_batches(local_data, cfg.train_batch, rng):
            loss, grads = prox_loss_and_grad(params, batch, global_params, prox_mu)
            losses.append(loss)
            params = sgd_step(params, grads, cfg.eta)
    if losses:
        return params, float(np.mean(losses))
    return params, _dataset_loss(params, local_data, cfg.train_batch)


def _dataset_loss(params: ModelParams, data: Dataset, batch_size: int) -> float:
    total = 0.0
    for b in iter_batches(data, batch_size):
        _, h = _features(params, b.inputs)
        logits = h @ params.classifier_weights + params.classifier_bias
        total += cross_entropy(logits, b.labels) * len(b)
    return total / len(data)


def local_training(
    i: int,
    global_params: ModelParams,
    local_data: Dataset,
    cfg: FederationConfig,
    public_data: Dataset,
    round_index: int = 0,
) -> LocalResult:
    """``cfg.local_epochs`` epochs of mini-batch SGD on local data, then the
    class-average norm table and accuracy of the result on ``public_data``."""
    params, loss = _train(i, global_params, local_data, cfg, round_index, 0.0)
    table = class_average_norms(params, public_data, cfg.test_batch)
    return LocalResult(params, table, evaluate(params, public_data), loss)


def fedprox_local_training(
    i: int,
    global_params: ModelParams,
    local_data: Dataset,
    cfg: FederationConfig,
    public_data: Dataset,
    round_index: int = 0,
) -> LocalResult:
    """As :func:`local_training` with the FedProx proximal term ``cfg.prox_mu``."""
    params, loss = _train(i, global_params, local_data, cfg, round_index, cfg.prox_mu)
    return LocalResult(params, None, evaluate(params, public_data), loss)


def select_regularized(accuracies: Sequence[float], p: float) -> list[int]:
    """Ids of the ``floor(n * p)`` lowest accuracies, ties to the lower id."""
    if not 0.0 <= p < 1.0:
        raise UsageError(f"p must lie in [0, 1), got {p}")
    n = len(accuracies)
    count = math.floor(n * p)
    order = sorted(range(n), key=lambda i: (accuracies[i], i))
    return sorted(order[:count])


def regularized_loss(
    params: ModelParams,
    batch: Batch,
    diff: NormDiffTable,
    lam: float,
    penalty: str = "signed",
    frozen: bool = False,
) -> tuple[float, Gradients]:
    """Cross-entropy plus ``lam * J`` and the exact gradient of the sum.

    ``J = sum_l rho_l * d_l`` over labels ``l`` in the batch, with
    ``rho_l`` the label's share of the batch. In ``signed`` mode
    ``d_l = ref_sum[l] - ref_count[l] * a_l`` where ``a_l`` is the mean
    feature norm of the batch's class-``l`` samples under ``params``;
    ``squared`` mode uses ``d_l ** 2 / 2``. With ``frozen=True`` the stored
    ``diff.delta[l]`` replaces ``d_l`` and the penalty carries no gradient.
    Labels missing from ``diff`` contribute nothing.
    """
    if penalty not in PENALTIES:
        raise UsageError(f"unknown penalty {penalty!r}")
    labels = batch.labels
    size = len(batch)
    weights = np.zeros(size)
    j_value = 0.0
    if lam != 0.0:
        norms = np.linalg.norm(_features(params, batch.inputs)[1], axis=1)
        for label in np.unique(labels):
            label = int(label)
            if label not in diff.delta:
                continue
            sel = labels == label
            share = sel.sum() / size
            if frozen:
                d = diff.delta[label]
                j_value += share * (d if penalty == "signed" else 0.5 * d * d)
                continue
            refs = diff.ref_count.get(label, 0)
            d = diff.ref_sum.get(label, 0.0) - refs * norms[sel].mean()
            if penalty == "signed":
                j_value += share * d
                # d(share * d)/d||h_s|| = share * (-refs / count) = -refs / size
                weights[sel] = -lam * refs / size
            else:
                j_value += share * 0.5 * d * d
                weights[sel] = -lam * d * refs / size
    ce, grads = loss_and_grad(params, batch, weights if np.any(weights) else None)
    return ce + lam * j_value, grads


def feature_norm_regularize(
    j: int,
    params: ModelParams,
    public_data: Dataset,
    diff: NormDiffTable,
    cfg: FederationConfig,
    round_index: int = 0,
) -> ModelParams:
    """``cfg.reg_epochs`` epochs of SGD on the public set minimizing :func:`regularized_loss`."""
    for epoch in range(cfg.reg_epochs):
        rng = _rng(cfg.seed, _STAGE_REG, round_index, epoch)
        for batch in iter_batches(public_data, cfg.test_batch, rng):
            _, grads = regularized_loss(params, batch, diff, cfg.lam, cfg.penalty, cfg.frozen_norms)
            params = sgd_step(params, grads, cfg.eta)
    return params


def aggregate_weighted(models: Sequence[ModelParams], sizes: Sequence[float]) -> ModelParams:
    """``sum_i (|D_i| / sum |D|) * w_i`` tensor by tensor."""
    if not models or len(models) != len(sizes):
        raise UsageError("need one size per model and at least one model")
    total = float(sum(sizes))
    if total <= 0:
        raise ProtocolError("aggregation weights sum to zero")
    weights = [s / total for s in sizes]
    out = []
    for tensors in zip(*(m.tensors() for m in models)):
        acc = np.zeros_like(tensors[0])
        for w, t in zip(weights, tensors):
            acc += w * t
        out.append(acc)
    return ModelParams(*out)


def run_federation(
    cfg: FederationConfig,
    plan: PartitionPlan,
    dataset: Dataset,
    max_workers: Optional[int] = None,
    initial_params: Optional[ModelParams] = None,
) -> list[RoundReport]:
    """Run ``cfg.rounds`` rounds of ``cfg.algorithm`` and report each round.

    Global accuracy is measured on the plan's public set. Every round's
    report carries the aggregated model in ``global_params``.
    """
    if plan.n != cfg.n:
        raise ConfigurationError(f"plan has {plan.n} participants but cfg.n={cfg.n}")
    plan.validate(len(dataset))
    public = plan.public_dataset(dataset)
    if len(public) == 0:
        raise ConfigurationError("the plan reserves no public data")
    local = [plan.local_dataset(dataset, i) for i in range(cfg.n)]
    sizes = [len(d) for d in local]
    global_params = initial_params or init_params(dataset.d_in, cfg.hidden, dataset.k, cfg.seed)
    train = fedprox_local_training if cfg.algorithm == "fedprox" else local_training
    everyone = list(range(cfg.n))
    pool = ThreadPoolExecutor(max_workers) if max_workers and max_workers > 1 else None
    reports = []
    try:
        for t in range(1, cfg.rounds + 1):
            start = time.perf_counter()
            g = global_params

            def work(i, g=g, t=t):
                return train(i, g, local[i], cfg, public, t)

            results = list(pool.map(work, everyone)) if pool else [work(i) for i in everyone]
            accs = [r.accuracy for r in results]
            models = [r.params for r in results]
            s_re: list[int] = []
            refined = {}
            if cfg.algorithm == "fnr":
                s_re = select_regularized(accs, cfg.p)
                if s_re:
                    tables = {i: r.table for i, r in enumerate(results)}

                    def refine(j, t=t):
                        diff = norm_differences(j, everyone, s_re, tables)
                        return feature_norm_regularize(j, models[j], public, diff, cfg, t)

                    new = list(pool.map(refine, s_re)) if pool else [refine(j) for j in s_re]
                    for j, m in zip(s_re, new):
                        models[j] = m
                        refined[j] = evaluate(m, public)
                    log.debug("round %d refined %s: %s", t, s_re, refined)
            global_params = aggregate_weighted(models, sizes)
            table_sizes = [len(r.table.payload()) if r.table is not None else 0 for r in results]
            up, down = traffic_for_round(
                cfg.n, cfg.algorithm, model_bytes(global_params, cfg.wire_bytes), table_sizes, cfg.count_tables
            )
            reports.append(
                RoundReport(
                    round=t,
                    global_acc=evaluate(global_params, public),
                    acc=accs,
                    loss=[r.loss for r in results],
                    s_re=s_re,
                    up_bytes=up,
                    down_bytes=down,
                    wall_s=time.perf_counter() - start,
                    refined_acc=refined,
                    global_params=global_params,
                )
            )
    finally:
        if pool:
            pool.shutdown()
    return reports


def write_jsonl(reports: Iterable[RoundReport], fp: IO[str], include_timing: bool = True) -> None:
    for r in reports:
        fp.write(json.dumps(r.to_json(include_timing)) + "\n")


def read_jsonl(fp: IO[str]) -> list[dict]:
    return [json.loads(line) for line in fp if line.strip()]
