"""Experiment specifications and the seed x algorithm orchestration loop."""

from __future__ import annotations

import csv
import datetime as _dt
import io
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Union

from .errors import ConfigurationError
from .federation import ALGORITHMS, PENALTIES, FederationConfig, run_federation, write_jsonl
from .metrics import cost_report, per_class_accuracy
from .partition import (
    Dataset,
    PartitionPlan,
    load_csv,
    make_synthetic_dataset,
    partition_feature_skew,
    partition_iid,
    partition_label_skew,
    partition_mixed,
    partition_quantity_skew,
)

log = logging.getLogger(__name__)

__all__ = [
    "SCENARIOS",
    "ConfigError",
    "DatasetSpec",
    "ExperimentSpec",
    "parse_config",
    "build_dataset",
    "build_plan",
    "run_cell",
    "run_experiment",
]

SCENARIOS = ("feature", "label", "quantity", "label+feature", "label+quantity", "iid")


class ConfigError(ConfigurationError):
    """Invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class DatasetSpec:
    k: int = 10
    d_in: int = 32
    per_class: int = 500
    spread: float = 0.2
    center_scale: float = 0.15
    csv: Optional[str] = None


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: str
    alpha: float
    sigma: Union[float, tuple]
    mu: float
    mask_fraction: float
    public_fraction: float
    dataset: DatasetSpec
    federation: FederationConfig
    algorithms: tuple
    seeds: tuple
    out: str
    workers: int = 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["sigma"] = list(self.sigma) if isinstance(self.sigma, tuple) else self.sigma
        d["algorithms"] = list(self.algorithms)
        d["seeds"] = list(self.seeds)
        return d


_FLAT_KEYS = {
    "scenario", "alpha", "sigma", "mu", "mask_fraction", "public_fraction", "participants", "rounds",
    "epochs", "re_epochs", "eta", "lambda", "p", "algo", "prox_mu", "penalty", "count_tables", "seed",
    "out", "train_batch", "test_batch", "hidden", "wire_bytes", "workers", "dataset",
}
_DATASET_KEYS = {f for f in DatasetSpec.__dataclass_fields__}


def _num(raw: Mapping, key: str, default, kind=float, path: Optional[str] = None):
    path = path or key
    if key not in raw or raw[key] is None:
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected {kind.__name__}, got {value!r}") from None
    if kind is int and float(value) != out:
        raise ConfigError(path, f"expected an integer, got {value!r}")
    return out


def _bool(raw: Mapping, key: str, default: bool) -> bool:
    if key not in raw or raw[key] is None:
        return default
    v = raw[key]
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.lower() in ("true", "1", "yes"):
        return True
    if isinstance(v, str) and v.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(key, f"expected a boolean, got {v!r}")


def _list(raw: Mapping, key: str, default, kind):
    if key not in raw or raw[key] is None:
        return default
    v = raw[key]
    if isinstance(v, str):
        v = [s for s in v.replace(";", ",").split(",") if s.strip()]
    if not isinstance(v, (list, tuple)):
        v = [v]
    try:
        return tuple(kind(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot parse {raw[key]!r}") from None


def _dataset_spec(raw) -> DatasetSpec:
    if raw is None:
        return DatasetSpec()
    if not isinstance(raw, Mapping):
        raise ConfigError("dataset", "expected an object")
    unknown = set(raw) - _DATASET_KEYS
    if unknown:
        raise ConfigError(f"dataset.{sorted(unknown)[0]}", "unknown key")
    d = DatasetSpec()
    spec = DatasetSpec(
        k=_num(raw, "k", d.k, int, "dataset.k"),
        d_in=_num(raw, "d_in", d.d_in, int, "dataset.d_in"),
        per_class=_num(raw, "per_class", d.per_class, int, "dataset.per_class"),
        spread=_num(raw, "spread", d.spread, float, "dataset.spread"),
        center_scale=_num(raw, "center_scale", d.center_scale, float, "dataset.center_scale"),
        csv=raw.get("csv"),
    )
    if spec.k < 2:
        raise ConfigError("dataset.k", "must be >= 2")
    if spec.d_in < 1:
        raise ConfigError("dataset.d_in", "must be >= 1")
    if spec.per_class < 1:
        raise ConfigError("dataset.per_class", "must be >= 1")
    if spec.spread < 0:
        raise ConfigError("dataset.spread", "must be >= 0")
    return spec


def parse_config(source: Union[str, Path, Mapping, None] = None, overrides: Optional[Mapping] = None) -> ExperimentSpec:
    """Resolve a JSON config (path or mapping) plus flat overrides into a full spec.

    Overrides win over the file. Every default is filled in, so the
    returned spec fully describes the experiment.
    """
    if source is None:
        raw: dict = {}
    elif isinstance(source, Mapping):
        raw = dict(source)
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except FileNotFoundError:
            raise ConfigError("config", f"file not found: {source}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config", "top level must be an object")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    unknown = set(raw) - _FLAT_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")

    scenario = raw.get("scenario", "label")
    if scenario not in SCENARIOS:
        raise ConfigError("scenario", f"must be one of {SCENARIOS}, got {scenario!r}")
    alpha = _num(raw, "alpha", 0.5)
    if not alpha > 0:
        raise ConfigError("alpha", f"must be > 0, got {alpha}")
    n = _num(raw, "participants", 10, int)
    if n < 2:
        raise ConfigError("participants", "must be >= 2")

    default_sigma = 0.5 if scenario == "feature" else 0.1
    sigma_raw = raw.get("sigma", default_sigma)
    if isinstance(sigma_raw, (list, tuple)) or (isinstance(sigma_raw, str) and "," in sigma_raw):
        sigma: Union[float, tuple] = _list(raw, "sigma", (), float)
        if scenario != "feature":
            raise ConfigError("sigma", "a per-participant list only applies to the feature scenario")
        if len(sigma) != n:
            raise ConfigError("sigma", f"need {n} values, got {len(sigma)}")
        if any(s < 0 for s in sigma):
            raise ConfigError("sigma", "must be >= 0")
    else:
        sigma = _num(raw, "sigma", default_sigma)
        if sigma < 0:
            raise ConfigError("sigma", "must be >= 0")
    mu = _num(raw, "mu", 0.0)
    mask_fraction = _num(raw, "mask_fraction", 1.0)
    if not 0.0 <= mask_fraction <= 1.0:
        raise ConfigError("mask_fraction", "must lie in [0, 1]")
    public_fraction = _num(raw, "public_fraction", 0.1)
    if not 0.0 < public_fraction < 1.0:
        raise ConfigError("public_fraction", "must lie in (0, 1)")

    algorithms = _list(raw, "algo", ("fnr",), str)
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigError("algo", f"must be one of {ALGORITHMS}, got {a!r}")
    if not algorithms:
        raise ConfigError("algo", "at least one algorithm required")
    penalty = raw.get("penalty", "signed")
    if penalty not in PENALTIES:
        raise ConfigError("penalty", f"must be one of {PENALTIES}, got {penalty!r}")
    seeds = _list(raw, "seed", (0,), int)
    if not seeds:
        raise ConfigError("seed", "at least one seed required")

    checks = {
        "rounds": (_num(raw, "rounds", 10, int), lambda v: v >= 1, "must be >= 1"),
        "epochs": (_num(raw, "epochs", 10, int), lambda v: v >= 0, "must be >= 0"),
        "re_epochs": (_num(raw, "re_epochs", 5, int), lambda v: v >= 0, "must be >= 0"),
        "eta": (_num(raw, "eta", 0.1), lambda v: v > 0, "must be > 0"),
        "lambda": (_num(raw, "lambda", 0.1), lambda v: v >= 0, "must be >= 0"),
        "p": (_num(raw, "p", 0.3), lambda v: 0 <= v < 1, "must lie in [0, 1)"),
        "prox_mu": (_num(raw, "prox_mu", 0.01), lambda v: v >= 0, "must be >= 0"),
        "train_batch": (_num(raw, "train_batch", 64, int), lambda v: v >= 1, "must be >= 1"),
        "test_batch": (_num(raw, "test_batch", 32, int), lambda v: v >= 1, "must be >= 1"),
        "hidden": (_num(raw, "hidden", 32, int), lambda v: v >= 1, "must be >= 1"),
        "wire_bytes": (_num(raw, "wire_bytes", 4, int), lambda v: v >= 1, "must be >= 1"),
        "workers": (_num(raw, "workers", 1, int), lambda v: v >= 1, "must be >= 1"),
    }
    vals = {}
    for key, (value, ok, msg) in checks.items():
        if not ok(value):
            raise ConfigError(key, f"{msg}, got {value}")
        vals[key] = value

    fed = FederationConfig(
        n=n,
        rounds=vals["rounds"],
        local_epochs=vals["epochs"],
        reg_epochs=vals["re_epochs"],
        eta=vals["eta"],
        lam=vals["lambda"],
        p=vals["p"],
        train_batch=vals["train_batch"],
        test_batch=vals["test_batch"],
        algorithm=algorithms[0],
        prox_mu=vals["prox_mu"],
        penalty=penalty,
        seed=seeds[0],
        hidden=vals["hidden"],
        wire_bytes=vals["wire_bytes"],
        count_tables=_bool(raw, "count_tables", True),
    )
    return ExperimentSpec(
        scenario=scenario,
        alpha=alpha,
        sigma=sigma,
        mu=mu,
        mask_fraction=mask_fraction,
        public_fraction=public_fraction,
        dataset=_dataset_spec(raw.get("dataset")),
        federation=fed,
        algorithms=algorithms,
        seeds=seeds,
        out=str(raw.get("out", "runs")),
        workers=vals["workers"],
    )


def build_dataset(spec: ExperimentSpec, seed: int) -> Dataset:
    ds = spec.dataset
    if ds.csv:
        return load_csv(ds.csv)
    return make_synthetic_dataset(ds.k, ds.d_in, ds.per_class, ds.spread, seed, center_scale=ds.center_scale)


def build_plan(spec: ExperimentSpec, dataset: Dataset, seed: int) -> PartitionPlan:
    n = spec.federation.n
    pf = spec.public_fraction
    if spec.scenario == "iid":
        return partition_iid(dataset, n, seed, pf)
    if spec.scenario == "label":
        return partition_label_skew(dataset, n, spec.alpha, seed, pf)
    if spec.scenario == "quantity":
        return partition_quantity_skew(dataset, n, spec.alpha, seed, pf, batch_size=spec.federation.train_batch)
    if spec.scenario == "feature":
        if isinstance(spec.sigma, tuple):
            sigmas = list(spec.sigma)
        else:
            # participants range from clean data up to the configured sigma
            sigmas = [spec.sigma * i / (n - 1) for i in range(n)]
        return partition_feature_skew(dataset, n, sigmas, spec.mu, spec.mask_fraction, seed, pf)
    return partition_mixed(
        dataset, n, spec.scenario, spec.alpha, float(spec.sigma), seed,
        mu=spec.mu, mask_fraction=spec.mask_fraction, public_fraction=pf,
    )


@dataclass
class CellResult:
    algorithm: str
    seed: int
    reports: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    rounds_path: Optional[Path] = None


def cell_name(spec: ExperimentSpec, algorithm: str, seed: int) -> str:
    return f"{spec.scenario.replace('+', '-')}_{algorithm}_seed{seed}"


def run_cell(spec: ExperimentSpec, algorithm: str, seed: int, out: Optional[Path] = None) -> CellResult:
    """Build data and plan for ``seed``, run one algorithm, optionally write its files."""
    dataset = build_dataset(spec, seed)
    plan = build_plan(spec, dataset, seed)
    cfg = spec.federation.replace(algorithm=algorithm, seed=seed)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    reports = run_federation(cfg, plan, dataset)
    final = reports[-1]
    traffic = sum(r.up_bytes + r.down_bytes for r in reports)
    wall = sum(r.wall_s for r in reports)
    public = plan.public_dataset(dataset)
    cost = cost_report(final.global_acc, traffic, wall, per_class_accuracy(final.global_params, public))
    result = CellResult(algorithm, seed, reports, cost.summary_json())
    if out is not None:
        name = cell_name(spec, algorithm, seed)
        buf = io.StringIO()
        write_jsonl(reports, buf, include_timing=False)
        result.rounds_path = out / f"{name}.rounds.jsonl"
        result.rounds_path.write_text(buf.getvalue())
        (out / f"{name}.summary.json").write_text(json.dumps(cost.summary_json(), indent=2) + "\n")
        meta = {
            "started_utc": started,
            "wall_s": [r.wall_s for r in reports],
            "time_s": wall,
            "refined_acc": [{str(k): v for k, v in r.refined_acc.items()} for r in reports],
        }
        (out / f"{name}.meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return result


def run_experiment(spec: ExperimentSpec) -> int:
    """Run every (seed, algorithm) cell and write reports; returns an exit status."""
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec.to_json(), indent=2) + "\n")
    cells = [(a, s) for s in spec.seeds for a in spec.algorithms]
    t0 = time.perf_counter()
    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            results = list(pool.map(lambda c: run_cell(spec, c[0], c[1], out), cells))
    else:
        results = [run_cell(spec, a, s, out) for a, s in cells]
    rows = io.StringIO()
    w = csv.writer(rows, lineterminator="\n")
    w.writerow(["round", "algorithm", "seed", "global_acc"])
    for res in results:
        for r in res.reports:
            w.writerow([r.round, res.algorithm, res.seed, repr(r.global_acc)])
    (out / "convergence.csv").write_text(rows.getvalue())
    log.info("ran %d cells in %.1fs", len(cells), time.perf_counter() - t0)
    return 0
