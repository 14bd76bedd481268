import numpy as np
import pytest

from fednorm.model import Batch, ModelParams, _features


def random_params(rng, d_in, d_h, k, scale=1.0):
    return ModelParams(
        scale * rng.standard_normal((d_in, d_h)),
        scale * rng.standard_normal(d_h),
        scale * rng.standard_normal((d_h, k)),
        scale * rng.standard_normal(k),
    )


def random_batch(rng, b, d_in, k):
    return Batch(rng.standard_normal((b, d_in)), rng.integers(0, k, size=b))


def kink_margin(params, x):
    """Smallest |pre-activation| over the batch; finite differences need it away from 0."""
    pre, h = _features(params, x)
    norms = np.linalg.norm(h, axis=1)
    return min(np.abs(pre).min(), norms.min())


def oracle_loss(flat, dims, x, y, anchor=None, prox_mu=0.0, diff=None, lam=0.0, penalty="signed"):
    """Independent extended-precision loss: cross-entropy, optional proximal
    term and optional feature-norm penalty, all evaluated in ``longdouble``."""
    ld = np.longdouble
    d_in, d_h, k = dims
    flat = np.asarray(flat, dtype=ld)
    w1 = flat[: d_in * d_h].reshape(d_in, d_h)
    b1 = flat[d_in * d_h : d_in * d_h + d_h]
    off = d_in * d_h + d_h
    w2 = flat[off : off + d_h * k].reshape(d_h, k)
    b2 = flat[off + d_h * k :]
    x = np.asarray(x, dtype=ld)
    h = np.maximum(np.einsum("bi,ij->bj", x, w1) + b1, ld(0))
    z = np.einsum("bj,jk->bk", h, w2) + b2
    zmax = z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1))
    loss = np.mean(lse - z[np.arange(len(y)), y])
    if anchor is not None and prox_mu:
        loss += ld(prox_mu) / 2 * np.sum((flat - np.asarray(anchor, dtype=ld)) ** 2)
    if diff is not None and lam:
        norms = np.sqrt(np.sum(h * h, axis=1))
        j = ld(0)
        for label in np.unique(y):
            label = int(label)
            if label not in diff.delta:
                continue
            sel = y == label
            share = ld(int(sel.sum())) / len(y)
            d = ld(diff.ref_sum.get(label, 0.0)) - diff.ref_count.get(label, 0) * norms[sel].mean()
            j += share * (d if penalty == "signed" else d * d / 2)
        loss += ld(lam) * j
    return loss


def central_diff(f, params, h=1e-5):
    """Central differences of ``f(flat_longdouble)`` at every parameter component."""
    flat = np.asarray(params.flatten(), dtype=np.longdouble)
    out = np.empty(flat.size)
    step = np.longdouble(h)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += step
        dn[i] -= step
        out[i] = float((f(up) - f(dn)) / (2 * step))
    return out


def max_rel_err(analytic, numeric, floor=1e-6):
    """Largest componentwise relative error; components below ``floor`` are
    compared relative to ``floor``."""
    return float(np.max(np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
