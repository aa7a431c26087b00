"""Minimal dense network engine with hand-derived gradients.

Everything runs in float64. A network is an ordered stack of
(weights, bias, activation) layers with optional inverted dropout after
each activated layer, so eval mode needs no rescaling. Gradients are exact
for the fixed loss family used in this repo (softmax cross-entropy and the
affine fairness regularizer built on top of the logits).
"""
from __future__ import annotations

import hashlib

import numpy as np

from .errors import ConfigurationError, InputError, StateError

ACTIVATIONS = ("linear", "relu")


class Cache:
    """Forward byproducts required for an exact backward pass."""

    __slots__ = ("inputs", "preacts", "masks", "mode", "version")

    def __init__(self, inputs, preacts, masks, mode, version):
        self.inputs = inputs
        self.preacts = preacts
        self.masks = masks
        self.mode = mode
        self.version = version


class DenseNet:
    """Stack of dense layers; `dims` chains input through hidden to output.

    `activations` has one tag per layer ("relu" or "linear"); the default is
    relu on every layer but the last. Dropout applies after each activated
    layer while in train mode, drawing masks from the net's own seeded RNG.
    """

    def __init__(self, dims, activations=None, dropout_prob=0.0, seed=0):
        if len(dims) < 2:
            raise ConfigurationError("need at least one layer (two dims)")
        if activations is None:
            activations = ["relu"] * (len(dims) - 2) + ["linear"]
        if len(activations) != len(dims) - 1:
            raise ConfigurationError("one activation tag per layer required")
        for act in activations:
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {act!r}")
        if not 0.0 <= dropout_prob < 1.0:
            raise ConfigurationError("dropout_prob must lie in [0, 1)")

        self.dims = list(int(d) for d in dims)
        self.activations = list(activations)
        self.dropout_prob = float(dropout_prob)
        self.mode = "train"
        self._rng = np.random.default_rng(seed)
        self._version = 0

        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            bound = np.sqrt(6.0 / fan_in)
            self.weights.append(self._rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    # -- bookkeeping ---------------------------------------------------

    @property
    def in_dim(self):
        return self.dims[0]

    @property
    def out_dim(self):
        return self.dims[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    def train_mode(self):
        self.mode = "train"

    def eval_mode(self):
        self.mode = "eval"

    def params(self):
        """Live parameter list, alternating W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, new_params):
        old = self.params()
        if len(new_params) != len(old):
            raise ConfigurationError("parameter count mismatch")
        for cur, new in zip(old, new_params):
            if cur.shape != np.shape(new):
                raise ConfigurationError("parameter shape mismatch")
        k = 0
        for i in range(self.n_layers):
            self.weights[i] = np.array(new_params[k], dtype=np.float64)
            self.biases[i] = np.array(new_params[k + 1], dtype=np.float64)
            k += 2
        self._version += 1

    def copy(self, seed=0):
        dup = DenseNet(self.dims, self.activations, self.dropout_prob, seed=seed)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        dup.mode = self.mode
        return dup

    # -- forward / backward ---------------------------------------------

    def forward(self, x):
        """Run the net on a batch; returns (output, cache)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigurationError(
                f"input of shape {x.shape} does not match input dim {self.in_dim}")
        if not np.isfinite(x).all():
            raise InputError("non-finite values in input batch")

        inputs, preacts, masks = [], [], []
        out = x
        for i in range(self.n_layers):
            inputs.append(out)
            z = out @ self.weights[i] + self.biases[i]
            preacts.append(z)
            if self.activations[i] == "relu":
                out = np.maximum(z, 0.0)
            else:
                out = z
            mask = None
            if (self.activations[i] != "linear" and self.dropout_prob > 0.0
                    and self.mode == "train"):
                keep = 1.0 - self.dropout_prob
                mask = (self._rng.random(out.shape) < keep) / keep
                out = out * mask
            masks.append(mask)
        cache = Cache(inputs, preacts, masks, self.mode, self._version)
        return out, cache

    def forward_eval(self, x):
        """Deterministic eval-mode output, mode restored afterwards."""
        prev = self.mode
        self.mode = "eval"
        try:
            out, _ = self.forward(x)
        finally:
            self.mode = prev
        return out

    def backward(self, cache, grad_out):
        """Backprop `grad_out` (dL/doutput) through a cached forward.

        Returns (param_grads, grad_input) where param_grads aligns with
        params(). Raises StateError if parameters changed since the forward.
        """
        if cache.version != self._version:
            raise StateError("stale cache: parameters changed since forward")
        grad = np.asarray(grad_out, dtype=np.float64)
        if grad.shape != (cache.inputs[0].shape[0], self.out_dim):
            raise ConfigurationError("loss gradient shape mismatch")

        grads = [None] * (2 * self.n_layers)
        for i in range(self.n_layers - 1, -1, -1):
            if cache.masks[i] is not None:
                grad = grad * cache.masks[i]
            if self.activations[i] == "relu":
                grad = grad * (cache.preacts[i] > 0.0)
            grads[2 * i] = cache.inputs[i].T @ grad
            grads[2 * i + 1] = grad.sum(axis=0)
            grad = grad @ self.weights[i].T
        return grads, grad


class Adam:
    """Adam optimizer; moments are allocated lazily on the first step."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr < 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or eps <= 0:
            raise ConfigurationError("invalid Adam hyperparameters")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.first_moment = None
        self.second_moment = None
        self.step_count = 0

    def step(self, net, grads):
        params = net.params()
        if len(grads) != len(params):
            raise ConfigurationError("gradient count mismatch")
        for p, g in zip(params, grads):
            if p.shape != np.shape(g):
                raise ConfigurationError("gradient shape mismatch")
            if not np.isfinite(g).all():
                raise InputError("non-finite gradient: update rejected")

        if self.first_moment is None:
            self.first_moment = [np.zeros_like(p) for p in params]
            self.second_moment = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        new_params = []
        for p, g, m, v in zip(params, grads, self.first_moment, self.second_moment):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            new = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.isfinite(new).all():
                raise StateError("non-finite parameters after update")
            new_params.append(new)
        net.set_params(new_params)


# -- losses -------------------------------------------------------------


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(logits, labels):
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ConfigurationError("labels must align with logit rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= logits.shape[1]:
        raise InputError("label out of range for logit width")
    return labels.astype(np.intp)


def cross_entropy_rows(logits, labels):
    """Per-row cross-entropy and its per-row logit gradient (unreduced)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(logits, labels)
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    rows = lse - logits[np.arange(len(labels)), labels]
    grad_rows = softmax(logits)
    grad_rows[np.arange(len(labels)), labels] -= 1.0
    return rows, grad_rows


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and the gradient w.r.t. logits."""
    rows, grad_rows = cross_entropy_rows(logits, labels)
    return rows.mean(), grad_rows / len(rows)


# -- checkpoint io -------------------------------------------------------
#
# Plain-text container, format "densenet v1":
#   line 1: densenet v1
#   line 2: dims d0 d1 ... dk
#   line 3: activations a1 ... ak
#   line 4: dropout p
#   line 5: params N
#   then N lines, one %.17g float per line, parameters in params() order,
#   each tensor row-major. %.17g round-trips float64 exactly.


def save_checkpoint(net, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write("densenet v1\n")
        fh.write("dims " + " ".join(str(d) for d in net.dims) + "\n")
        fh.write("activations " + " ".join(net.activations) + "\n")
        fh.write(f"dropout {net.dropout_prob!r}\n")
        flat = np.concatenate([p.ravel() for p in net.params()])
        fh.write(f"params {flat.size}\n")
        for v in flat:
            fh.write("%.17g\n" % v)


def load_checkpoint(path, seed=0):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "densenet v1":
            raise InputError(f"unsupported checkpoint header {header!r}")
        dims = [int(t) for t in fh.readline().split()[1:]]
        activations = fh.readline().split()[1:]
        dropout = float(fh.readline().split()[1])
        count = int(fh.readline().split()[1])
        flat = np.fromiter((float(fh.readline()) for _ in range(count)),
                           dtype=np.float64, count=count)
    net = DenseNet(dims, activations, dropout, seed=seed)
    shaped = []
    offset = 0
    for p in net.params():
        shaped.append(flat[offset:offset + p.size].reshape(p.shape))
        offset += p.size
    if offset != flat.size:
        raise InputError("checkpoint parameter count mismatch")
    net.set_params(shaped)
    net.eval_mode()
    return net


def params_digest(net):
    """SHA-256 over the raw parameter bytes; used by frozen-body audits."""
    h = hashlib.sha256()
    for p in net.params():
        h.update(np.ascontiguousarray(p).tobytes())
    return h.hexdigest()
