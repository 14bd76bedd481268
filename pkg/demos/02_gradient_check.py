"""The network's gradients, including the feature-norm penalty, against
central finite differences.

Run: python3 demos/02_gradient_check.py
"""

import numpy as np

from fednorm.federation import regularized_loss
from fednorm.model import Batch, init_params, loss_and_grad
from fednorm.norms import NormDiffTable

rng = np.random.default_rng(0)
params = init_params(d_in=4, d_h=6, k=3, seed=1)
batch = Batch(rng.standard_normal((8, 4)), rng.integers(0, 3, size=8))


def finite_differences(f, params, h=1e-5):
    flat = params.flatten()
    out = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(type(params).unflatten(up, params.dims)) - f(type(params).unflatten(dn, params.dims))) / (2 * h)
    return out


# %% Plain cross-entropy.
_, grads = loss_and_grad(params, batch)
numeric = finite_differences(lambda q: loss_and_grad(q, batch)[0], params)
print("cross-entropy    max |analytic - numeric| =", np.max(np.abs(grads.flatten() - numeric)))

# %% The regularized loss adds lam * sum_l rho_l * d_l, where d_l compares
# the reference participants' norms with this batch's class-average norm.
# Its gradient flows through h / ||h|| into the feature extractor.
diff = NormDiffTable(delta={0: 0.0, 1: 0.0, 2: 0.0}, ref_sum={0: 4.0, 1: 6.0, 2: 2.0}, ref_count={0: 2, 1: 3, 2: 1})
for penalty in ("signed", "squared"):
    loss, grads = regularized_loss(params, batch, diff, lam=0.5, penalty=penalty)
    numeric = finite_differences(lambda q: regularized_loss(q, batch, diff, 0.5, penalty)[0], params)
    print(f"{penalty:<8} penalty  max |analytic - numeric| =", np.max(np.abs(grads.flatten() - numeric)))
