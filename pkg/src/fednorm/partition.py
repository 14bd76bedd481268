"""Synthetic datasets and non-i.i.d. partition plans.

A :class:`PartitionPlan` assigns disjoint index lists of one
:class:`Dataset` to the participants, reserves a stratified public split
for the server, and optionally attaches a :class:`NoiseSpec` per
participant (feature distribution skew). Every generator is a pure
function of its arguments and ``seed``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from .errors import ConfigurationError, GenerationError, UsageError

__all__ = [
    "Dataset",
    "NoiseSpec",
    "PartitionPlan",
    "make_synthetic_dataset",
    "apply_feature_noise",
    "dirichlet_sample",
    "split_public",
    "partition_iid",
    "partition_label_skew",
    "partition_quantity_skew",
    "partition_feature_skew",
    "partition_mixed",
    "load_csv",
    "save_csv",
]

MAX_RETRIES = 100


@dataclass(frozen=True)
class Dataset:
    """Inputs ``[N, d_in]``, integer labels ``[N]`` and the class count ``k``."""

    inputs: np.ndarray
    labels: np.ndarray
    k: int

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ConfigurationError(f"inputs {x.shape} do not match {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.k):
            raise ConfigurationError(f"labels must lie in [0, {self.k})")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.k)


@dataclass(frozen=True)
class NoiseSpec:
    """Masked Gaussian perturbation ``x + (eps * mask) * sigma + mu``."""

    mask: np.ndarray
    sigma: float
    mu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        m = np.array(self.mask, dtype=np.float64).reshape(-1)
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ConfigurationError("noise mask entries must be 0 or 1")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be >= 0, got {self.sigma}")
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "seed", int(self.seed))

    def to_json(self) -> dict:
        return {"mask": [int(v) for v in self.mask], "sigma": self.sigma, "mu": self.mu, "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseSpec":
        return cls(np.asarray(obj["mask"]), obj["sigma"], obj["mu"], obj["seed"])


@dataclass(frozen=True)
class PartitionPlan:
    participants: tuple
    public: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    noise: tuple = ()

    def __post_init__(self):
        parts = tuple(np.array(p, dtype=np.int64).reshape(-1) for p in self.participants)
        pub = np.array(self.public, dtype=np.int64).reshape(-1)
        noise = tuple(self.noise) if self.noise else (None,) * len(parts)
        if len(noise) != len(parts):
            raise ConfigurationError(f"{len(noise)} noise specs for {len(parts)} participants")
        for a in parts + (pub,):
            a.setflags(write=False)
        object.__setattr__(self, "participants", parts)
        object.__setattr__(self, "public", pub)
        object.__setattr__(self, "noise", noise)

    @property
    def n(self) -> int:
        return len(self.participants)

    def sizes(self) -> list[int]:
        return [int(p.size) for p in self.participants]

    def validate(self, n_samples: Optional[int] = None) -> None:
        """Raise :class:`GenerationError` unless the plan is a disjoint partial cover."""
        if any(p.size == 0 for p in self.participants):
            raise GenerationError("a participant received no samples")
        allidx = np.concatenate(self.participants + (self.public,))
        if np.unique(allidx).size != allidx.size:
            raise GenerationError("index lists overlap")
        if n_samples is not None and allidx.size and (allidx.min() < 0 or allidx.max() >= n_samples):
            raise GenerationError("index out of dataset range")

    def local_dataset(self, dataset: Dataset, i: int) -> Dataset:
        """Participant ``i``'s data with its feature noise (if any) applied."""
        local = dataset.subset(self.participants[i])
        spec = self.noise[i]
        if spec is None:
            return local
        return Dataset(apply_feature_noise(local.inputs, spec), local.labels, local.k)

    def public_dataset(self, dataset: Dataset) -> Dataset:
        return dataset.subset(self.public)

    def class_matrix(self, dataset: Dataset) -> np.ndarray:
        """``[n, k]`` sample counts per (participant, class)."""
        return np.stack([np.bincount(dataset.labels[p], minlength=dataset.k) for p in self.participants])

    def to_json(self) -> dict:
        return {
            "participants": [p.tolist() for p in self.participants],
            "public": self.public.tolist(),
            "noise": [None if s is None else s.to_json() for s in self.noise],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PartitionPlan":
        noise = tuple(None if s is None else NoiseSpec.from_json(s) for s in obj["noise"])
        return cls(tuple(obj["participants"]), obj["public"], noise)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "PartitionPlan":
        return cls.from_json(json.loads(Path(path).read_text()))


def _substream_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1, dtype=np.uint64)[0] >> 1)


def make_synthetic_dataset(
    k: int,
    d_in: int,
    per_class: int,
    cluster_spread: float,
    seed: int,
    center_scale: float = 1.0,
) -> Dataset:
    """``k`` isotropic Gaussian clusters around random centers.

    Center coordinates are normal with standard deviation ``center_scale``
    (unit by default); samples have per-coordinate standard deviation
    ``cluster_spread`` around their center. Samples are ordered class by
    class.
    """
    if k < 2 or per_class < 1 or d_in < 1:
        raise ConfigurationError("need k >= 2, per_class >= 1 and d_in >= 1")
    if cluster_spread < 0:
        raise ConfigurationError("cluster_spread must be >= 0")
    rng = np.random.default_rng(seed)
    centers = center_scale * rng.standard_normal((k, d_in))
    labels = np.repeat(np.arange(k), per_class)
    noise = rng.standard_normal((k * per_class, d_in))
    inputs = centers[labels] + cluster_spread * noise
    return Dataset(inputs, labels, k)


def apply_feature_noise(x: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """``x + (eps * mask) * sigma + mu`` with ``eps ~ N(0, 1)`` drawn from ``spec.seed``.

    The shift ``mu`` applies to every coordinate, masked or not.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.mask.shape[0]:
        raise ConfigurationError(f"input width {x.shape[-1]} != mask width {spec.mask.shape[0]}")
    if spec.sigma == 0.0 and spec.mu == 0.0:
        return x.copy()
    eps = np.random.default_rng(spec.seed).standard_normal(x.shape)
    return x + (eps * spec.mask) * spec.sigma + spec.mu


def _log_gamma_variates(rng: np.random.Generator, alpha: float, n: int) -> np.ndarray:
    # Gamma(a) = Gamma(a + 1) * U**(1/a); stays representable for tiny alpha
    if alpha >= 1.0:
        return np.log(rng.gamma(alpha, 1.0, size=n))
    g = rng.gamma(alpha + 1.0, 1.0, size=n)
    u = rng.random(size=n)
    return np.log(g) + np.log1p(-u) / alpha


def _dirichlet(rng: np.random.Generator, alpha: float, n: int) -> np.ndarray:
    logs = _log_gamma_variates(rng, alpha, n)
    w = np.exp(logs - logs.max())
    return w / w.sum()


def dirichlet_sample(alpha: float, n: int, seed) -> np.ndarray:
    """One draw of ``Dir_n(alpha)`` via normalized Gamma variates.

    ``seed`` may also be a :class:`numpy.random.Generator`, which is advanced.
    """
    if n < 1 or not alpha > 0:
        raise UsageError(f"need n >= 1 and alpha > 0, got n={n}, alpha={alpha}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _dirichlet(rng, float(alpha), int(n))


def _cumulative_split(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer counts summing to ``total`` via cumulative-sum rounding."""
    cuts = np.rint(np.cumsum(proportions)[:-1] * total).astype(np.int64)
    cuts = np.clip(cuts, 0, total)
    edges = np.concatenate([[0], np.maximum.accumulate(cuts), [total]])
    return np.diff(edges)


def _public_indices(labels: np.ndarray, k: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"public fraction must lie in (0, 1), got {fraction}")
    out = []
    for c in range(k):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        take = math.ceil(fraction * idx.size)
        if take >= idx.size:
            raise GenerationError(f"public fraction {fraction} leaves class {c} empty in the remainder")
        out.append(rng.permutation(idx)[:take])
    return np.sort(np.concatenate(out)) if out else np.zeros(0, dtype=np.int64)


def split_public(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; the public part gets ``ceil(fraction * N_class)`` of each class."""
    rng = np.random.default_rng(seed)
    pub = _public_indices(dataset.labels, dataset.k, fraction, rng)
    rest = np.setdiff1d(np.arange(len(dataset)), pub)
    return dataset.subset(pub), dataset.subset(rest)


def _prepare(dataset: Dataset, public_fraction: float, rng: np.random.Generator):
    if public_fraction > 0:
        pub = _public_indices(dataset.labels, dataset.k, public_fraction, rng)
    else:
        pub = np.zeros(0, dtype=np.int64)
    pool = np.setdiff1d(np.arange(len(dataset)), pub)
    return pub, pool


def _check_n(n: int, minimum: int = 2) -> None:
    if n < minimum:
        raise UsageError(f"need at least {minimum} participants, got {n}")


def _uniform_split(pool: np.ndarray, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    if pool.size < n:
        raise GenerationError(f"{pool.size} samples cannot cover {n} participants")
    return [np.sort(p) for p in np.array_split(rng.permutation(pool), n)]


def partition_iid(dataset: Dataset, n: int, seed: int, public_fraction: float = 0.1) -> PartitionPlan:
    """Uniformly random equal-size split (the i.i.d. reference scenario)."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    pub, pool = _prepare(dataset, public_fraction, rng)
    plan = PartitionPlan(tuple(_uniform_split(pool, n, rng)), pub)
    plan.validate(len(dataset))
    return plan


def _per_class_dirichlet(labels, pool, k, n, alpha, rng, quantity: Optional[np.ndarray] = None):
    parts: list[list[np.ndarray]] = [[] for _ in range(n)]
    for c in range(k):
        idx = rng.permutation(pool[labels[pool] == c])
        if idx.size == 0:
            continue
        p = _dirichlet(rng, alpha, n)
        if quantity is not None:
            p = p * quantity
            p = p / p.sum()
        counts = _cumulative_split(idx.size, p)
        for i, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            parts[i].append(chunk)
    return [np.sort(np.concatenate(p)) if p else np.zeros(0, dtype=np.int64) for p in parts]


def partition_label_skew(
    dataset: Dataset,
    n: int,
    alpha: float,
    seed: int,
    public_fraction: float = 0.1,
    max_retries: int = MAX_RETRIES,
) -> PartitionPlan:
    """Each class is spread over participants by its own ``Dir_n(alpha)`` draw.

    The whole plan is redrawn (at most ``max_retries`` times) while any
    participant ends up empty.
    """
    _check_n(n)
    if not alpha > 0:
        raise UsageError(f"alpha must be > 0, got {alpha}")
    rng = np.random.default_rng(seed)
    pub, pool = _prepare(dataset, public_fraction, rng)
    for _ in range(max_retries):
        parts = _per_class_dirichlet(dataset.labels, pool, dataset.k, n, alpha, rng)
        if all(p.size > 0 for p in parts):
            plan = PartitionPlan(tuple(parts), pub)
            plan.validate(len(dataset))
            return plan
    raise GenerationError(f"label skew: no plan without empty participants after {max_retries} draws")


def _controlled_rounding(target: np.ndarray) -> np.ndarray:
    """Round a matrix with integer row and column sums entry-wise to floor or
    ceil while keeping those sums (always feasible for two-way tables)."""
    base = np.floor(target).astype(np.int64)
    frac = target - base
    row_need = np.rint(target.sum(axis=1)).astype(np.int64) - base.sum(axis=1)
    col_need = np.rint(target.sum(axis=0)).astype(np.int64) - base.sum(axis=0)
    g = nx.DiGraph()
    for i, r in enumerate(row_need):
        g.add_edge("s", ("r", i), capacity=int(r))
    for c, q in enumerate(col_need):
        g.add_edge(("c", c), "t", capacity=int(q))
    for i, c in zip(*np.nonzero(frac > 1e-12)):
        g.add_edge(("r", int(i)), ("c", int(c)), capacity=1)
    value, flow = nx.maximum_flow(g, "s", "t")
    if value != int(row_need.sum()):
        raise GenerationError("controlled rounding failed")
    out = base.copy()
    for i in range(target.shape[0]):
        for node, f in flow.get(("r", i), {}).items():
            out[i, node[1]] += f
    return out


def partition_quantity_skew(
    dataset: Dataset,
    n: int,
    alpha: float,
    seed: int,
    public_fraction: float = 0.1,
    batch_size: int = 64,
    max_retries: int = MAX_RETRIES,
) -> PartitionPlan:
    """Participant sizes from one ``Dir_n(alpha)`` draw; class mix kept global.

    Each participant's per-class count is the floor or ceiling of
    ``size * N_class / N``. Size draws with a participant smaller than
    ``min(2 * batch_size, N // n)`` are redrawn; on small pools with small
    ``alpha`` the retry budget can run out.
    """
    _check_n(n)
    if not alpha > 0:
        raise UsageError(f"alpha must be > 0, got {alpha}")
    rng = np.random.default_rng(seed)
    pub, pool = _prepare(dataset, public_fraction, rng)
    labels = dataset.labels[pool]
    class_n = np.bincount(labels, minlength=dataset.k)
    total = pool.size
    for _ in range(max_retries):
        sizes = _cumulative_split(total, _dirichlet(rng, alpha, n))
        if sizes.min() >= min(2 * batch_size, total // n):
            break
    else:
        raise GenerationError(f"quantity skew: no admissible sizes after {max_retries} draws")
    counts = _controlled_rounding(np.outer(sizes, class_n) / total)
    parts: list[list[np.ndarray]] = [[] for _ in range(n)]
    for c in range(dataset.k):
        idx = rng.permutation(pool[labels == c])
        for i, chunk in enumerate(np.split(idx, np.cumsum(counts[:, c])[:-1])):
            parts[i].append(chunk)
    plan = PartitionPlan(tuple(np.sort(np.concatenate(p)) for p in parts), pub)
    plan.validate(len(dataset))
    return plan


def _noise_specs(d_in, sigmas, mu, mask_fraction, seed, rng) -> tuple:
    if not 0.0 <= mask_fraction <= 1.0:
        raise UsageError(f"mask fraction must lie in [0, 1], got {mask_fraction}")
    specs = []
    for i, s in enumerate(sigmas):
        mask = (rng.random(d_in) < mask_fraction).astype(np.float64)
        specs.append(NoiseSpec(mask, float(s), float(mu), _substream_seed(seed, 0x5EED, i)))
    return tuple(specs)


def partition_feature_skew(
    dataset: Dataset,
    n: int,
    sigma_per_participant: Sequence[float],
    mu: float,
    mask_fraction: float,
    seed: int,
    public_fraction: float = 0.1,
) -> PartitionPlan:
    """Uniform equal-size split plus a per-participant masked Gaussian noise spec.

    Indices coincide with :func:`partition_iid` for the same seed. Masks are
    Bernoulli(``mask_fraction``) per coordinate, fixed per participant.
    """
    _check_n(n)
    if len(sigma_per_participant) != n:
        raise UsageError(f"need {n} sigmas, got {len(sigma_per_participant)}")
    rng = np.random.default_rng(seed)
    pub, pool = _prepare(dataset, public_fraction, rng)
    parts = _uniform_split(pool, n, rng)
    noise = _noise_specs(dataset.d_in, sigma_per_participant, mu, mask_fraction, seed, rng)
    plan = PartitionPlan(tuple(parts), pub, noise)
    plan.validate(len(dataset))
    return plan


def partition_mixed(
    dataset: Dataset,
    n: int,
    mode: str,
    alpha: float,
    sigma: float,
    seed: int,
    mu: float = 0.0,
    mask_fraction: float = 1.0,
    public_fraction: float = 0.1,
    max_retries: int = MAX_RETRIES,
) -> PartitionPlan:
    """Two skews at once.

    ``"label+feature"``: :func:`partition_label_skew` with the same seed,
    then the same noise level ``sigma`` for every participant.
    ``"label+quantity"``: per-class Dirichlet proportions multiplied by one
    participant-level ``Dir_n(alpha)`` quantity draw before splitting.
    """
    if mode == "label+feature":
        base = partition_label_skew(dataset, n, alpha, seed, public_fraction, max_retries)
        rng = np.random.default_rng([int(seed), 0xFEA7])
        noise = _noise_specs(dataset.d_in, [sigma] * n, mu, mask_fraction, seed, rng)
        return PartitionPlan(base.participants, base.public, noise)
    if mode == "label+quantity":
        _check_n(n)
        if not alpha > 0:
            raise UsageError(f"alpha must be > 0, got {alpha}")
        rng = np.random.default_rng(seed)
        pub, pool = _prepare(dataset, public_fraction, rng)
        for _ in range(max_retries):
            q = _dirichlet(rng, alpha, n)
            parts = _per_class_dirichlet(dataset.labels, pool, dataset.k, n, alpha, rng, quantity=q)
            if all(p.size > 0 for p in parts):
                plan = PartitionPlan(tuple(parts), pub)
                plan.validate(len(dataset))
                return plan
        raise GenerationError(f"label+quantity: no plan without empty participants after {max_retries} draws")
    raise UsageError(f"unknown mixed mode {mode!r}")


def load_csv(path, k: Optional[int] = None) -> Dataset:
    """Read ``label,f0,...,f{d-1}`` rows (header required)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label":
            raise ConfigurationError(f"{path}: first header column must be 'label'")
        rows = [r for r in reader if r]
    if not rows:
        raise ConfigurationError(f"{path}: no samples")
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    inputs = np.array([[float(v) for v in r[1:]] for r in rows], dtype=np.float64)
    if inputs.shape[1] != len(header) - 1:
        raise ConfigurationError(f"{path}: row width does not match header")
    return Dataset(inputs, labels, k if k is not None else int(labels.max()) + 1)


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(dataset.d_in)])
        for y, x in zip(dataset.labels, dataset.inputs):
            w.writerow([int(y)] + [repr(float(v)) for v in x])
