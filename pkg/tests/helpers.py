"""Shared test utilities: finite-difference oracles and fixture builders."""
from __future__ import annotations

import numpy as np

from fairactive import nn


def numerical_gradient(loss_fn, params, h=1e-5):
    """Central finite differences of loss_fn() w.r.t. each live param array."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            fp = loss_fn()
            p[idx] = orig - h
            fm = loss_fn()
            p[idx] = orig
            g[idx] = (fp - fm) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, atol=1e-8):
    """Max relative error; differences below atol count as zero."""
    worst = 0.0
    for a, b in zip(analytic, numeric):
        num = np.abs(a - b)
        den = np.maximum(np.abs(a) + np.abs(b), 1e-8)
        rel = np.where(num <= atol, 0.0, num / den)
        worst = max(worst, float(rel.max()))
    return worst


def relu_safe_net_and_batch(seed, dims, n_rows=6, margin=1e-3, scale=1.0):
    """A random net and batch whose relu pre-activations stay clear of the
    kink, so central differences at h=1e-5 remain a valid oracle."""
    for attempt in range(200):
        rng = np.random.default_rng((seed + 1) * 1000 + attempt)
        net = nn.DenseNet(dims, seed=int(rng.integers(2 ** 31)))
        net.eval_mode()
        x = scale * rng.standard_normal((n_rows, dims[0]))
        _, cache = net.forward(x)
        clear = all(np.abs(z).min() > margin for z, act in
                    zip(cache.preacts, net.activations) if act == "relu")
        if clear:
            return net, x
    raise AssertionError("could not build a kink-free fixture")
