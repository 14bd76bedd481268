"""Label skew plus growing input noise.

The same label-skew split is used at every noise level, so only the
Gaussian perturbation of the participants' inputs changes.

Run: python3 demos/04_noise_robustness.py
"""

import numpy as np

from fednorm.federation import FederationConfig, run_federation
from fednorm.partition import make_synthetic_dataset, partition_mixed

sigmas = (0.0, 0.1, 0.5)
acc = {(a, s): [] for a in ("fnr", "fedavg") for s in sigmas}
for seed in range(3):
    ds = make_synthetic_dataset(10, 32, 500, 0.2, seed, center_scale=0.15)
    for sigma in sigmas:
        plan = partition_mixed(ds, 10, "label+feature", 0.5, sigma, seed)
        for algo in ("fnr", "fedavg"):
            cfg = FederationConfig(rounds=10, local_epochs=2, reg_epochs=2, algorithm=algo, seed=seed)
            acc[algo, sigma].append(run_federation(cfg, plan, ds)[-1].global_acc)

print("sigma   fnr      fedavg")
for s in sigmas:
    print(f"{s:5.1f}  {np.mean(acc['fnr', s]):.4f}  {np.mean(acc['fedavg', s]):.4f}")
