"""What refinement does to one struggling participant, class by class.

After nine federated rounds, the least accurate participant of round ten
is refined on the public set. Per-class accuracy is measured on a
held-out split before and after. A second refinement with lam = 0 (plain
fine-tuning on the public set) separates the effect of the norm penalty
from the effect of seeing balanced data.

Run: python3 demos/05_per_class_ablation.py
"""

from fednorm.federation import (
    FederationConfig,
    feature_norm_regularize,
    local_training,
    run_federation,
    select_regularized,
)
from fednorm.metrics import per_class_accuracy
from fednorm.norms import norm_differences
from fednorm.partition import make_synthetic_dataset, partition_label_skew, split_public

seed = 0
test, train = split_public(make_synthetic_dataset(10, 32, 500, 0.2, seed, center_scale=0.15), 0.2, 1000)
plan = partition_label_skew(train, 10, 0.5, seed)
cfg = FederationConfig(rounds=9, local_epochs=2, reg_epochs=2, seed=seed)
g = run_federation(cfg, plan, train)[-1].global_params
public = plan.public_dataset(train)

results = [local_training(i, g, plan.local_dataset(train, i), cfg, public, 10) for i in range(10)]
selected = select_regularized([r.accuracy for r in results], cfg.p)
j = selected[0]
diff = norm_differences(j, range(10), selected, {i: r.table for i, r in enumerate(results)})
counts = plan.local_dataset(train, j).class_counts()

before = per_class_accuracy(results[j].params, test)
after = per_class_accuracy(feature_norm_regularize(j, results[j].params, public, diff, cfg, 10), test)
plain = per_class_accuracy(feature_norm_regularize(j, results[j].params, public, diff, cfg.replace(lam=0.0), 10), test)

print(f"participant {j} (selected set {selected})")
print("class  local n  before  after  lam=0")
for c in sorted(before):
    print(f"{c:>5}  {counts[c]:>7}  {before[c]:.2f}    {after[c]:.2f}   {plain[c]:.2f}")
