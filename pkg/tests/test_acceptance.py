"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (or ``-s`` to see only the
verdict lines). Experiment-scale criteria use the synthetic dataset
defaults of the experiment runner: 10 classes, 32 inputs, 500 samples per
class, cluster spread 0.2 and center scale 0.15.
"""

import json
import time

import numpy as np

from fednorm.cli import main
from fednorm.convergence import check_recurrence, decaying_schedule, make_quadratic_problem, run_fed_sgd
from fednorm.experiment import DatasetSpec, parse_config, run_experiment
from fednorm.federation import (
    FederationConfig,
    aggregate_weighted,
    feature_norm_regularize,
    local_training,
    prox_loss_and_grad,
    regularized_loss,
    run_federation,
    select_regularized,
)
from fednorm.metrics import per_class_accuracy
from fednorm.model import Batch, loss_and_grad, predict
from fednorm.norms import ClassNormTable, NormDiffTable, class_average_norms, norm_differences
from fednorm.partition import (
    Dataset,
    dirichlet_sample,
    make_synthetic_dataset,
    partition_feature_skew,
    partition_label_skew,
    partition_mixed,
    partition_quantity_skew,
    split_public,
)

from conftest import central_diff, kink_margin, max_rel_err, oracle_loss, random_params

SEEDS = range(5)
DATA = DatasetSpec()


def verdict(capsys, number, name, ok, detail, seconds):
    line = f"criterion {number:>2} {name:<32} {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f}s)"
    with capsys.disabled():
        print("\n" + line)
    return ok


def synthetic(seed):
    return make_synthetic_dataset(DATA.k, DATA.d_in, DATA.per_class, DATA.spread, seed, center_scale=DATA.center_scale)


def experiment_cfg(seed, algorithm, **extra):
    return FederationConfig(n=10, rounds=10, local_epochs=2, reg_epochs=2, seed=seed, algorithm=algorithm, **extra)


def final_correct(reports, public_size):
    # integer counts avoid float ties when comparing means
    return round(reports[-1].global_acc * public_size)


# 1 -------------------------------------------------------------------------

COST_TRIPLES = [
    # (accuracy, time s, traffic MB, kappa, rho)
    (0.9976, 6060, 8920, 1.6462, 1.1184), (0.6001, 6840, 8920, 0.8774, 0.6728),
    (0.5956, 8160, 8920, 0.7299, 0.6677), (0.7425, 6840, 13380, 1.0855, 0.5549),
    (0.5530, 10692, 8920, 0.5172, 0.6199), (0.6223, 6525, 8920, 0.9536, 0.6976),
    (0.9970, 7133, 8920, 1.3977, 1.1177), (0.8393, 6006, 8920, 1.3974, 0.9409),
    (0.8773, 11310, 8920, 0.7757, 0.9835), (0.9077, 7176, 13380, 1.2649, 0.6784),
    (0.6515, 8814, 8920, 0.7392, 0.7304), (0.9043, 7098, 8920, 1.2740, 1.0138),
    (0.9982, 5400, 8920, 1.8485, 1.1191), (0.9107, 6786, 8920, 1.3420, 1.0210),
    (0.8874, 9360, 8920, 0.9481, 0.9948), (0.7017, 7332, 13380, 0.9570, 0.5244),
    (0.7336, 11544, 8920, 0.6355, 0.8224), (0.7293, 6006, 8920, 1.2143, 0.8176),
]


def test_criterion_01_metric_reproduction(capsys):
    t0 = time.perf_counter()
    worst = 0.0
    for acc, secs, mb, k, r in COST_TRIPLES:
        code = main(["metrics", "--accuracy", str(acc), "--time", str(secs), "--traffic", str(mb)])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        worst = max(worst, abs(out["kappa"] - k), abs(out["rho"] - r))
    dt = time.perf_counter() - t0
    ok = worst <= 5e-4 and dt < 1.0
    verdict(capsys, 1, "metric reproduction", ok, f"36 values, max |err| {worst:.5f}", dt)
    assert ok


# 2 -------------------------------------------------------------------------


def fuzz_gradients(rng, kind, count):
    worst, done = 0.0, 0
    while done < count:
        d_in, d_h, k, b = rng.integers(1, 5), rng.integers(1, 6), rng.integers(2, 5), rng.integers(1, 7)
        p = random_params(rng, d_in, d_h, k)
        x = rng.standard_normal((b, d_in))
        if kink_margin(p, x) < 1e-3:
            continue
        batch = Batch(x, rng.integers(0, k, size=b))
        x_, y_ = batch.inputs, batch.labels
        if kind == "ce":
            f = lambda flat: oracle_loss(flat, p.dims, x_, y_)
            g = loss_and_grad(p, batch)[1]
        elif kind == "prox":
            anchor = random_params(rng, d_in, d_h, k)
            mu = float(rng.uniform(0, 2))
            f = lambda flat: oracle_loss(flat, p.dims, x_, y_, anchor=anchor.flatten(), prox_mu=mu)
            g = prox_loss_and_grad(p, batch, anchor, mu)[1]
        else:
            refs = {c: int(rng.integers(0, 4)) for c in range(k)}
            diff = NormDiffTable({c: 0.0 for c in range(k)}, {c: float(rng.uniform(0, 3)) * refs[c] for c in range(k)}, refs)
            lam = float(rng.uniform(0.01, 2))
            f = lambda flat: oracle_loss(flat, p.dims, x_, y_, diff=diff, lam=lam, penalty=kind)
            g = regularized_loss(p, batch, diff, lam, kind)[1]
        worst = max(worst, max_rel_err(g.flatten(), central_diff(f, p)))
        done += 1
    return worst


def test_criterion_02_gradient_fidelity(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {kind: fuzz_gradients(rng, kind, 100) for kind in ("ce", "prox", "signed", "squared")}
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-6 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(capsys, 2, "gradient fidelity", ok, f"4x100 configs, max rel err {detail}", dt)
    assert ok


# 3 -------------------------------------------------------------------------


def oracle_class_norms(p, x, y):
    sums, counts = {}, {}
    for s in range(len(y)):
        h = [max(0.0, sum(x[s, a] * p.feature_weights[a, b] for a in range(x.shape[1])) + p.feature_bias[b]) for b in range(p.dims[1])]
        c = int(y[s])
        sums[c] = sums.get(c, 0.0) + sum(v * v for v in h) ** 0.5
        counts[c] = counts.get(c, 0) + 1
    return {c: sums[c] / counts[c] for c in sums}


def test_criterion_03_oracle_equivalence(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = {"norms": 0.0, "diffs": 0.0, "aggregate": 0.0, "per_class": 0.0}
    for _ in range(50):
        d_in, d_h, k = rng.integers(1, 5), rng.integers(1, 6), rng.integers(2, 6)
        p = random_params(rng, d_in, d_h, k)
        x = rng.standard_normal((30, d_in))
        y = rng.integers(0, k, size=30)
        ds = Dataset(x, y, k)
        table = class_average_norms(p, ds, int(rng.integers(1, 40)))
        expected = oracle_class_norms(p, x, y)
        assert set(table.avg) == set(expected)
        worst["norms"] = max(worst["norms"], max(abs(table.avg[c] - expected[c]) for c in expected))

        n = int(rng.integers(3, 10))
        tables = {}
        for m in range(n):
            labels = [c for c in range(k) if rng.random() < 0.7] or [0]
            tables[m] = ClassNormTable({c: float(rng.uniform(0, 10)) for c in labels}, {c: 1 for c in labels})
        reg = sorted(rng.choice(n, size=int(rng.integers(1, n)), replace=False).tolist())
        for j in reg:
            got = norm_differences(j, range(n), reg, tables).delta
            for label in tables[j].avg:
                want = 0.0
                for m in range(n):
                    if m not in reg and label in tables[m].avg:
                        want += tables[m].avg[label] - tables[j].avg[label]
                worst["diffs"] = max(worst["diffs"], abs(got[label] - want))

        models = [random_params(rng, d_in, d_h, k) for _ in range(n)]
        sizes = rng.integers(1, 200, size=n).tolist()
        agg = aggregate_weighted(models, sizes).flatten()
        flats = [m.flatten() for m in models]
        for c in range(agg.size):
            want = sum(sizes[i] * flats[i][c] for i in range(n)) / sum(sizes)
            worst["aggregate"] = max(worst["aggregate"], abs(agg[c] - want))

        pred = predict(p, x)
        conf = np.zeros((k, k), dtype=int)
        for t, q in zip(y, pred):
            conf[t, q] += 1
        got = per_class_accuracy(p, ds)
        for c in range(k):
            if conf[c].sum():
                worst["per_class"] = max(worst["per_class"], abs(got[c] - conf[c, c] / conf[c].sum()))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-10 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    verdict(capsys, 3, "oracle equivalence", ok, f"50 instances each, max abs diff {detail}", dt)
    assert ok


# 4 -------------------------------------------------------------------------


def plan_for(scenario, ds, n, alpha, seed, rng):
    if scenario == "label":
        return partition_label_skew(ds, n, alpha, seed)
    if scenario == "quantity":
        return partition_quantity_skew(ds, n, alpha, seed, batch_size=int(rng.integers(1, 9)))
    if scenario == "feature":
        return partition_feature_skew(ds, n, rng.uniform(0, 0.5, size=n).tolist(), float(rng.uniform(-0.2, 0.2)), float(rng.uniform(0, 1)), seed)
    return partition_mixed(ds, n, scenario, alpha, float(rng.uniform(0, 0.5)), seed)


def test_criterion_04_partition_invariants(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    scenarios = ["feature", "label", "quantity", "label+feature", "label+quantity"]
    failures = []
    for t in range(200):
        scenario = scenarios[t % 5]
        k, per_class, n = int(rng.integers(2, 8)), int(rng.integers(40, 120)), int(rng.integers(2, 8))
        alpha = float(rng.uniform(0.3, 20))
        ds = make_synthetic_dataset(k, 3, per_class, 0.5, t)
        plan = plan_for(scenario, ds, n, alpha, t, rng)
        every = np.concatenate(plan.participants + (plan.public,))
        if not (every.size == np.unique(every).size == len(ds)):
            failures.append((t, scenario, "cover"))
        if any(p.size == 0 for p in plan.participants):
            failures.append((t, scenario, "empty"))
        if scenario == "quantity":
            m = plan.class_matrix(ds)
            pool = np.concatenate(plan.participants)
            frac = np.bincount(ds.labels[pool], minlength=k) / pool.size
            if np.any(np.abs(m - np.outer(plan.sizes(), frac)) > 1):
                failures.append((t, scenario, "stratification"))
        p = dirichlet_sample(alpha, n, t)
        if not (np.all(p >= 0) and abs(p.sum() - 1) < 1e-12):
            failures.append((t, scenario, "dirichlet"))
    ds = synthetic(0)
    empty = sum(bool(np.any(partition_label_skew(ds, 10, 0.5, s).class_matrix(ds) == 0)) for s in range(100))
    dt = time.perf_counter() - t0
    ok = not failures and empty >= 95 and dt < 60
    verdict(capsys, 4, "partition invariants", ok, f"200 plans, {len(failures)} violations; empty cell in {empty}/100 seeds", dt)
    assert ok, failures[:5]


# 5 -------------------------------------------------------------------------


def test_criterion_05_degeneracy(capsys):
    t0 = time.perf_counter()
    identical = 0
    for seed in SEEDS:
        ds = synthetic(seed)
        plan = partition_label_skew(ds, 10, 0.5, seed)
        # table uploads are excluded so the byte counters are comparable
        fnr = run_federation(experiment_cfg(seed, "fnr", lam=0.0, p=0.0, count_tables=False), plan, ds)
        avg = run_federation(experiment_cfg(seed, "fedavg", count_tables=False), plan, ds)
        same = all(a.same_trajectory(b) and a.global_params.bit_equal(b.global_params) for a, b in zip(fnr, avg))
        identical += same
    dt = time.perf_counter() - t0
    ok = identical == len(SEEDS) and dt < 120
    verdict(capsys, 5, "degeneracy equivalence", ok, f"{identical}/5 seeds bit-identical", dt)
    assert ok


# 6 -------------------------------------------------------------------------


def test_criterion_06_directional_skew(capsys):
    t0 = time.perf_counter()
    correct = {"fnr": [], "fedavg": [], "fedprox": []}
    size = None
    for seed in SEEDS:
        ds = synthetic(seed)
        plan = partition_label_skew(ds, 10, 0.5, seed)
        size = plan.public.size
        for algo in correct:
            correct[algo].append(final_correct(run_federation(experiment_cfg(seed, algo), plan, ds), size))
    mean = {a: np.mean(v) / size for a, v in correct.items()}
    dt = time.perf_counter() - t0
    gap = mean["fnr"] - mean["fedavg"]
    ok = gap >= 0.02 and sum(correct["fnr"]) > sum(correct["fedprox"]) and dt < 600
    detail = f"FNR {mean['fnr']:.4f}, FedAvg {mean['fedavg']:.4f}, FedProx {mean['fedprox']:.4f}, gap {gap:+.4f}"
    verdict(capsys, 6, "directional skew result", ok, detail, dt)
    assert ok


# 7 -------------------------------------------------------------------------


def test_criterion_07_noise_robustness(capsys):
    t0 = time.perf_counter()
    sigmas = [0.0, 0.1, 0.5]
    correct = {(a, s): 0 for a in ("fnr", "fedavg") for s in sigmas}
    size = None
    for seed in SEEDS:
        ds = synthetic(seed)
        for sigma in sigmas:
            plan = partition_mixed(ds, 10, "label+feature", 0.5, sigma, seed)
            size = plan.public.size
            for algo in ("fnr", "fedavg"):
                correct[algo, sigma] += final_correct(run_federation(experiment_cfg(seed, algo), plan, ds), size)
    acc = {key: v / (size * len(SEEDS)) for key, v in correct.items()}
    avg_curve = [correct["fedavg", s] for s in sigmas]
    monotone = all(b <= a for a, b in zip(avg_curve, avg_curve[1:]))
    drop_fnr = correct["fnr", 0.0] - correct["fnr", 0.5]
    drop_avg = correct["fedavg", 0.0] - correct["fedavg", 0.5]
    dt = time.perf_counter() - t0
    ok = monotone and drop_fnr < drop_avg and dt < 900
    detail = (
        "FedAvg " + "/".join(f"{acc['fedavg', s]:.4f}" for s in sigmas)
        + ", FNR " + "/".join(f"{acc['fnr', s]:.4f}" for s in sigmas)
        + f", drops {drop_fnr / (size * 5):.4f} vs {drop_avg / (size * 5):.4f}"
    )
    verdict(capsys, 7, "noise-robustness trend", ok, detail, dt)
    assert ok


# 8 -------------------------------------------------------------------------


def test_criterion_08_convergence_recurrence(capsys):
    t0 = time.perf_counter()
    prob = make_quadratic_problem(5, 10, 1.0, seed=0)
    series = run_fed_sgd(prob, decaying_schedule(0.1, 50), local_steps=5, rounds=400, reps=100, seed=0)
    rep = check_recurrence(series, prob, slack=1.0)
    dt = time.perf_counter() - t0
    ratio = rep.delta_final / rep.delta_0
    ok = rep.violations <= 0.05 * rep.total and all(rep.conditions.values()) and ratio < 1e-3 and dt < 120
    detail = f"{rep.violations}/{rep.total} violations, conditions {rep.conditions}, delta ratio {ratio:.1e}"
    verdict(capsys, 8, "convergence recurrence", ok, detail, dt)
    assert ok


# 9 -------------------------------------------------------------------------


def test_criterion_09_determinism(tmp_path, capsys):
    t0 = time.perf_counter()
    raw = {
        "scenario": "label",
        "alpha": 0.5,
        "epochs": 2,
        "re_epochs": 2,
        "algo": ["fnr", "fedavg", "fedprox"],
        "seed": [0, 1],
    }
    serial = parse_config({**raw, "out": str(tmp_path / "serial")})
    again = parse_config({**raw, "out": str(tmp_path / "again")})
    threaded = parse_config({**raw, "out": str(tmp_path / "threaded"), "workers": 4})
    for spec in (serial, again, threaded):
        assert run_experiment(spec) == 0
    names = sorted(p.name for p in (tmp_path / "serial").glob("*.rounds.jsonl"))
    same = 0
    for name in names:
        ref = (tmp_path / "serial" / name).read_bytes()
        same += ref == (tmp_path / "again" / name).read_bytes() == (tmp_path / "threaded" / name).read_bytes()
    dt = time.perf_counter() - t0
    ok = len(names) == 6 and same == 6
    verdict(capsys, 9, "determinism", ok, f"{same}/{len(names)} JSON-lines reports byte-identical over rerun and threads", dt)
    assert ok


# 10 ------------------------------------------------------------------------


def test_criterion_10_per_class_ablation(capsys):
    t0 = time.perf_counter()
    before, after, improved_seeds = [], [], 0
    for seed in SEEDS:
        # a held-out split keeps the measurement off the public set used for refinement
        test, train = split_public(synthetic(seed), 0.2, seed + 1000)
        plan = partition_label_skew(train, 10, 0.5, seed)
        cfg = experiment_cfg(seed, "fnr").replace(rounds=9)
        g = run_federation(cfg, plan, train)[-1].global_params
        public = plan.public_dataset(train)
        results = [local_training(i, g, plan.local_dataset(train, i), cfg, public, 10) for i in range(10)]
        selected = select_regularized([r.accuracy for r in results], cfg.p)
        j = selected[0]
        counts = plan.local_dataset(train, j).class_counts()
        rare = sorted(range(len(counts)), key=lambda c: (counts[c], c))[:2]
        diff = norm_differences(j, range(10), selected, {i: r.table for i, r in enumerate(results)})
        refined = feature_norm_regularize(j, results[j].params, public, diff, cfg, 10)
        b = per_class_accuracy(results[j].params, test)
        a = per_class_accuracy(refined, test)
        before.append([b[c] for c in rare])
        after.append([a[c] for c in rare])
        improved_seeds += all(a[c] > b[c] for c in rare)
    mb, ma = np.mean(before, axis=0), np.mean(after, axis=0)
    dt = time.perf_counter() - t0
    ok = bool(np.all(ma > mb)) and dt < 300
    detail = f"rarest two classes {mb[0]:.3f}->{ma[0]:.3f}, {mb[1]:.3f}->{ma[1]:.3f}; both improved in {improved_seeds}/5 seeds"
    verdict(capsys, 10, "per-class ablation", ok, detail, dt)
    assert ok
