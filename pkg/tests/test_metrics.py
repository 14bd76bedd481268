import numpy as np
import pytest

from fednorm.errors import UsageError
from fednorm.metrics import (
    ACCURACY_BYTES,
    cost_report,
    kappa,
    model_bytes,
    per_class_accuracy,
    rho_metric,
    traffic_for_round,
)
from fednorm.model import ModelParams, evaluate, init_params, predict
from fednorm.partition import Dataset

from conftest import random_params

# (time s, accuracy, kappa, rho) per algorithm and scenario; traffic in MB
COST_TABLE = {
    "feature": [
        ("FNR-FL", 8920, 6060, 0.9976, 1.6462, 1.1184),
        ("FedAvg", 8920, 6840, 0.6001, 0.8774, 0.6728),
        ("FedProx", 8920, 8160, 0.5956, 0.7299, 0.6677),
        ("SCAFFOLD", 13380, 6840, 0.7425, 1.0855, 0.5549),
        ("MOON", 8920, 10692, 0.5530, 0.5172, 0.6199),
        ("FedNova", 8920, 6525, 0.6223, 0.9536, 0.6976),
    ],
    "label": [
        ("FNR-FL", 8920, 7133, 0.9970, 1.3977, 1.1177),
        ("FedAvg", 8920, 6006, 0.8393, 1.3974, 0.9409),
        ("FedProx", 8920, 11310, 0.8773, 0.7757, 0.9835),
        ("SCAFFOLD", 13380, 7176, 0.9077, 1.2649, 0.6784),
        ("MOON", 8920, 8814, 0.6515, 0.7392, 0.7304),
        ("FedNova", 8920, 7098, 0.9043, 1.2740, 1.0138),
    ],
    "quantity": [
        ("FNR-FL", 8920, 5400, 0.9982, 1.8485, 1.1191),
        ("FedAvg", 8920, 6786, 0.9107, 1.3420, 1.0210),
        ("FedProx", 8920, 9360, 0.8874, 0.9481, 0.9948),
        ("SCAFFOLD", 13380, 7332, 0.7017, 0.9570, 0.5244),
        ("MOON", 8920, 11544, 0.7336, 0.6355, 0.8224),
        ("FedNova", 8920, 6006, 0.7293, 1.2143, 0.8176),
    ],
}
ROWS = [(s, *r) for s, rows in COST_TABLE.items() for r in rows]


@pytest.mark.parametrize("scenario,algo,traffic,time,acc,k,r", ROWS)
def test_cost_table_reproduces(scenario, algo, traffic, time, acc, k, r):
    assert abs(kappa(acc, time) - k) <= 5e-4
    assert abs(rho_metric(acc, traffic) - r) <= 5e-4


def test_metric_examples():
    assert kappa(0.9976, 6060) == pytest.approx(1.6462, abs=1e-4)
    assert kappa(0.9970, 7133) == pytest.approx(1.3977, abs=1e-4)
    assert rho_metric(0.9976, 8920) == pytest.approx(1.1184, abs=1e-4)
    assert rho_metric(0.9982, 8920) == pytest.approx(1.1191, abs=1e-4)
    assert kappa(0.0, 10) == 0.0 and rho_metric(0.0, 10) == 0.0


def test_metric_errors():
    with pytest.raises(UsageError):
        kappa(0.5, 0)
    with pytest.raises(UsageError):
        rho_metric(0.5, -1.0)


def test_metric_homogeneity():
    assert kappa(0.8, 10) == pytest.approx(2 * kappa(0.4, 10))
    assert rho_metric(0.8, 10) == pytest.approx(2 * rho_metric(0.4, 10))
    assert kappa(0.4, 20) == pytest.approx(kappa(0.4, 10) / 2)
    assert rho_metric(0.4, 20) == pytest.approx(rho_metric(0.4, 10) / 2)


def test_traffic_fedavg():
    assert traffic_for_round(10, "fedavg", 1000) == (10_000, 10_000)


def test_traffic_fnr_adds_tables():
    up_avg, down_avg = traffic_for_round(10, "fedavg", 1000)
    up, down = traffic_for_round(10, "fnr", 1000, 123)
    assert down == down_avg and up - up_avg == 10 * (123 + ACCURACY_BYTES)
    assert traffic_for_round(3, "fnr", 1000, [5, 6, 7]) == (3000 + 18 + 3 * ACCURACY_BYTES, 3000)
    assert traffic_for_round(10, "fnr", 1000, 123, count_tables=False) == (up_avg, down_avg)


def test_traffic_errors():
    with pytest.raises(UsageError):
        traffic_for_round(10, "fnr", 0)
    with pytest.raises(UsageError):
        traffic_for_round(2, "fnr", 10, [1, 2, 3])


def test_model_bytes():
    p = init_params(3, 4, 2, seed=0)
    assert model_bytes(p) == 4 * (12 + 4 + 8 + 2)
    assert model_bytes(p, wire_bytes=8) == 8 * 26


def test_per_class_perfect():
    p = ModelParams(np.eye(2), np.zeros(2), np.eye(2), np.zeros(2))
    ds = Dataset([[1.0, 0.0], [0.0, 1.0]], [0, 1], 2)
    assert per_class_accuracy(p, ds) == {0: 1.0, 1: 1.0}


def test_per_class_matches_confusion_matrix(rng):
    for _ in range(20):
        p = random_params(rng, 4, 6, 5)
        x = rng.standard_normal((80, 4))
        y = rng.integers(0, 4, size=80)
        ds = Dataset(x, y, 5)
        pred = predict(p, x)
        conf = np.zeros((5, 5), dtype=int)
        for t, q in zip(y, pred):
            conf[t, q] += 1
        expected = {c: conf[c, c] / conf[c].sum() for c in range(5) if conf[c].sum()}
        got = per_class_accuracy(p, ds)
        assert set(got) == set(expected)
        assert max(abs(got[c] - expected[c]) for c in got) < 1e-10
        freq = {c: conf[c].sum() / 80 for c in got}
        assert abs(sum(freq[c] * got[c] for c in got) - evaluate(p, ds)) < 1e-12


def test_cost_report_summary():
    rep = cost_report(0.9976, 8_920_000_000, 6060, {0: 1.0})
    s = rep.summary_json()
    assert set(s) == {"accuracy", "traffic_mb", "time_s", "kappa", "rho", "per_class"}
    assert s["traffic_mb"] == 8920.0
    assert s["kappa"] == pytest.approx(1.6462, abs=1e-4)
    assert s["rho"] == pytest.approx(1.1184, abs=1e-4)
    assert s["per_class"] == {"0": 1.0}
