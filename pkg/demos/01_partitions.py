"""How the non-i.i.d. scenarios carve up one dataset.

Run: python3 demos/01_partitions.py
"""

# %% A small synthetic dataset: 10 Gaussian clusters in 32 dimensions.
import numpy as np

from fednorm.partition import (
    make_synthetic_dataset,
    partition_feature_skew,
    partition_iid,
    partition_label_skew,
    partition_mixed,
    partition_quantity_skew,
)

ds = make_synthetic_dataset(k=10, d_in=32, per_class=500, cluster_spread=0.2, seed=0, center_scale=0.15)
print(f"{len(ds)} samples, {ds.k} classes, {ds.d_in} features")

# %% Every plan reserves a stratified public set (10% per class) first.
# The rest is spread over 10 participants. The class matrix counts samples
# per (participant, class); zeros are the "white cells" of label skew.
np.set_printoptions(linewidth=120)
plans = {
    "iid": partition_iid(ds, 10, seed=0),
    "label (alpha=0.5)": partition_label_skew(ds, 10, 0.5, seed=0),
    "quantity (alpha=2)": partition_quantity_skew(ds, 10, 2.0, seed=0),
    "label+quantity": partition_mixed(ds, 10, "label+quantity", 0.5, 0.0, seed=0),
}
for name, plan in plans.items():
    m = plan.class_matrix(ds)
    print(f"\n{name}: sizes {plan.sizes()}, empty cells {int((m == 0).sum())}")
    print(m)

# %% Feature skew keeps the i.i.d. indices but perturbs each participant's
# inputs with its own Gaussian noise level on a random coordinate mask.
sigmas = [0.05 * i for i in range(10)]
plan = partition_feature_skew(ds, 10, sigmas, mu=0.0, mask_fraction=0.5, seed=0)
for i in (0, 5, 9):
    clean = ds.subset(plan.participants[i]).inputs
    noisy = plan.local_dataset(ds, i).inputs
    delta = noisy - clean
    mask = plan.noise[i].mask == 1
    print(f"participant {i}: sigma {sigmas[i]:.2f}, masked coords {mask.sum()}, measured SD {delta[:, mask].std():.3f}")
