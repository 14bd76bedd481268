"""Traffic accounting and the accuracy-per-cost metrics.

Run: python3 demos/07_cost_metrics.py
"""

from fednorm.metrics import BYTES_PER_MB, kappa, model_bytes, rho_metric, traffic_for_round
from fednorm.model import init_params
from fednorm.norms import ClassNormTable

# %% One round of ten participants with a 32-32-10 network at 4 bytes per parameter.
size = model_bytes(init_params(32, 32, 10, seed=0))
table = ClassNormTable({c: 1.2345678 for c in range(10)}, {c: 50 for c in range(10)})
for algo in ("fedavg", "fnr"):
    up, down = traffic_for_round(10, algo, size, len(table.payload()))
    print(f"{algo:<7} up {up:>7} B  down {down:>7} B")
print(f"norm table payload: {len(table.payload())} bytes")

# %% kappa = accuracy * 1e4 / seconds and rho = accuracy * 1e4 / MB.
for acc, secs, mb in [(0.9976, 6060, 8920), (0.9970, 7133, 8920), (0.9982, 5400, 8920)]:
    print(f"acc {acc}: kappa {kappa(acc, secs):.4f}  rho {rho_metric(acc, mb):.4f}")
print(f"(1 MB = {BYTES_PER_MB} bytes)")
