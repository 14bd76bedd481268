"""Checking the local-SGD distance recurrence on a quadratic federation.

Five participants own quadratics with different curvatures and centers.
Local SGD with noisy gradients runs five steps between averages, with a
decaying step size. The script prints how often the measured squared
distance to the optimum exceeds the one-step bound.

Run: python3 demos/06_convergence.py
"""

import json

from fednorm.convergence import check_recurrence, decaying_schedule, make_quadratic_problem, run_fed_sgd

problem = make_quadratic_problem(n=5, dim=10, heterogeneity=1.0, seed=0)
print(f"mu={problem.mu:.3f}  L={problem.smoothness:.3f}  Gamma={problem.gamma:.3f}")

series = run_fed_sgd(problem, decaying_schedule(0.1, 50), local_steps=5, rounds=400, reps=100, seed=0)
report = check_recurrence(series, problem)
print(json.dumps(report.to_json(), indent=2))
for m in (0, 10, 100, 1000, 2000):
    print(f"step {m:>4}: delta = {series.deltas[m]:.3e}")
