"""Debiasing the task head with the relaxed rate-gap regularizer.

The classifier is split into a pretrained body that emits embeddings, a
task head producing 2 class logits, and a sensitive head predicting group
membership from the same embeddings. After pretraining the body is frozen;
all mitigation happens in the heads.

The hybrid training loss is

    mean cross-entropy over the whole train pool
    + lam * sum over classes y of (ptilde_0(y) - ptilde_1(y))^2

where ptilde_a(y) is the mean logit margin over the *annotated* members of
subgroup (a, y). Cross-entropy is mini-batched; the regularizer term is
computed on the full annotated set (it is tiny) with a deterministic
no-dropout forward, and its gradient is added to the last mini-batch of
each epoch.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fairness, nn
from .errors import ConfigurationError, StateError

log = logging.getLogger(__name__)


@dataclass
class PodConfig:
    lam: float
    epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-3
    tol: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigurationError("lam must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ConfigurationError("invalid training configuration")


class FairClassifier:
    """Body + task head + sensitive head trio sharing one embedding space."""

    def __init__(self, body, task_head, sensitive_head):
        if body.out_dim != task_head.in_dim or body.out_dim != sensitive_head.in_dim:
            raise ConfigurationError("head input dims must equal the body output dim")
        self.body = body
        self.task_head = task_head
        self.sensitive_head = sensitive_head
        self.frozen_body = False

    @classmethod
    def build(cls, input_dim, embed_dim=32, head_hidden=32, task_layers=2,
              dropout=0.5, seed=0):
        """Assemble the per-dataset architecture: single-layer relu body,
        `task_layers`-layer MLP task head, single-layer sensitive head."""
        ss = np.random.SeedSequence(seed)
        s_body, s_task, s_sens = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
        body = nn.DenseNet([input_dim, embed_dim], ["relu"], dropout, seed=s_body)
        head_dims = [embed_dim] + [head_hidden] * (task_layers - 1) + [2]
        task_head = nn.DenseNet(head_dims, dropout_prob=dropout, seed=s_task)
        sensitive_head = nn.DenseNet([embed_dim, 2], ["linear"], seed=s_sens)
        return cls(body, task_head, sensitive_head)

    def freeze_body(self):
        self.frozen_body = True
        self.body.eval_mode()
        self._body_digest = nn.params_digest(self.body)

    def body_digest(self):
        return nn.params_digest(self.body)

    def embed(self, x):
        return self.body.forward_eval(x)

    def task_logits(self, h):
        return self.task_head.forward_eval(h)

    def sensitive_logits(self, h):
        return self.sensitive_head.forward_eval(h)


# -- pretraining ----------------------------------------------------------


def pretrain(clf, dataset, epochs=50, batch_size=256, lr=1e-3, rng=None, freeze=True):
    """Joint cross-entropy training of body + task head on the train split.

    Needs no sensitive annotations. Freezes the body afterwards unless
    `freeze` is False (the plain vanilla trainer reuses this loop).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    body, head = clf.body, clf.task_head
    opt_b, opt_h = nn.Adam(lr=lr), nn.Adam(lr=lr)
    ids = dataset.train_ids()
    x, y = dataset.features, dataset.labels
    history = []
    for _ in range(epochs):
        order = ids.copy()
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            h, cache_b = body.forward(x[batch])
            z, cache_h = head.forward(h)
            loss, grad = nn.softmax_cross_entropy(z, y[batch])
            if not np.isfinite(loss):
                raise StateError("pretraining diverged: non-finite loss")
            grads_h, grad_h_in = head.backward(cache_h, grad)
            grads_b, _ = body.backward(cache_b, grad_h_in)
            opt_h.step(head, grads_h)
            opt_b.step(body, grads_b)
        z_eval = head.forward_eval(body.forward_eval(x[ids]))
        rows, _ = nn.cross_entropy_rows(z_eval, y[ids])
        history.append(float(rows.mean()))
    if freeze:
        clf.freeze_body()
    return history


# -- the hybrid loss --------------------------------------------------------


def _regularizer_grads(head, h_ann, y_ann, a_ann, lam):
    """Gradient of lam * relaxed rate gap w.r.t. head params (no dropout).

    Returns (param grads or None, reg value, dropped classes).
    """
    prev = head.mode
    head.mode = "eval"
    try:
        logits, cache = head.forward(h_ann)
    finally:
        head.mode = prev
    reg, dlogits, dropped = fairness.relaxed_gap_grad(logits, y_ann, a_ann)
    if len(dropped) == 2:
        return None, reg, dropped
    grads, _ = head.backward(cache, lam * dlogits)
    return grads, reg, dropped


def pod_loss(task_head, h_all, y_all, h_ann, y_ann, a_ann, lam, want_grads=True):
    """Full-batch hybrid loss in eval mode (deterministic, differentiable).

    Returns a dict with ce, reg, total, dropped and, when requested, the
    parameter gradients. This is the function the gradient checks probe.
    """
    prev = task_head.mode
    task_head.mode = "eval"
    try:
        logits, cache = task_head.forward(h_all)
    finally:
        task_head.mode = prev
    ce, ce_grad = nn.softmax_cross_entropy(logits, y_all)
    out = {"ce": float(ce)}
    grads = None
    if want_grads:
        grads, _ = task_head.backward(cache, ce_grad)
    if lam != 0.0 and len(y_ann):
        reg_grads, reg, dropped = _regularizer_grads(task_head, h_ann, y_ann, a_ann, lam)
        if want_grads and reg_grads is not None:
            grads = [g + rg for g, rg in zip(grads, reg_grads)]
    else:
        ptilde = (fairness.relaxed_rates(task_head.forward_eval(h_ann), y_ann, a_ann)
                  if len(y_ann) else [[None, None], [None, None]])
        reg, dropped = fairness.relaxed_gap(ptilde)
    out["reg"] = float(reg)
    out["dropped"] = dropped
    out["total"] = out["ce"] + lam * out["reg"]
    if want_grads:
        out["grads"] = grads
    return out


# -- training loops ---------------------------------------------------------


def pod_epoch(clf, dataset, ledger, config, opt, rng, h_cache=None):
    """One epoch of hybrid-loss head training; returns the loss breakdown.

    Cross-entropy runs over every train instance in mini-batches (dropout
    active); the regularizer gradient, computed on the full annotated set,
    is folded into the final mini-batch. The returned breakdown is measured
    in eval mode after the epoch, so total == ce + lam * reg holds exactly.
    """
    if not clf.frozen_body:
        raise StateError("POD requires a frozen body")
    ann_ids, ann_a = ledger.annotations()
    if len(ann_ids) == 0:
        raise StateError("POD requires a nonempty annotated set")
    h = h_cache if h_cache is not None else clf.embed(dataset.features)
    head = clf.task_head
    ids = dataset.train_ids()
    y = dataset.labels
    dropped = []

    order = ids.copy()
    rng.shuffle(order)
    n = len(order)
    for start in range(0, n, config.batch_size):
        batch = order[start:start + config.batch_size]
        logits, cache = head.forward(h[batch])
        _, grad = nn.softmax_cross_entropy(logits, y[batch])
        grads, _ = head.backward(cache, grad)
        if start + config.batch_size >= n and config.lam != 0.0:
            reg_grads, _, dropped = _regularizer_grads(
                head, h[ann_ids], y[ann_ids], ann_a, config.lam)
            if reg_grads is not None:
                grads = [g + rg for g, rg in zip(grads, reg_grads)]
            if dropped:
                log.info("regularizer classes %s dropped (empty subgroup)", dropped)
        opt.step(head, grads)

    breakdown = pod_loss(head, h[ids], y[ids], h[ann_ids], y[ann_ids], ann_a,
                         config.lam, want_grads=False)
    return breakdown


def pod_train(clf, dataset, ledger, config, rng, h_cache=None):
    """Run POD epochs with early stop once the total loss improvement
    falls below config.tol. Returns the per-epoch breakdown history."""
    opt = nn.Adam(lr=config.lr)
    history = []
    prev_total = np.inf
    for _ in range(config.epochs):
        breakdown = pod_epoch(clf, dataset, ledger, config, opt, rng, h_cache)
        history.append(breakdown)
        if prev_total - breakdown["total"] < config.tol:
            break
        prev_total = breakdown["total"]
    return history


def head_ce_epoch(clf, dataset, config, opt, rng, h_cache=None):
    """One epoch of plain cross-entropy head training (no regularizer).

    Mirrors pod_epoch's batching and RNG consumption; with lam == 0 the two
    produce bit-identical parameter trajectories for the same seeds.
    """
    if not clf.frozen_body:
        raise StateError("head training requires a frozen body")
    h = h_cache if h_cache is not None else clf.embed(dataset.features)
    head = clf.task_head
    ids = dataset.train_ids()
    y = dataset.labels
    order = ids.copy()
    rng.shuffle(order)
    for start in range(0, len(order), config.batch_size):
        batch = order[start:start + config.batch_size]
        logits, cache = head.forward(h[batch])
        _, grad = nn.softmax_cross_entropy(logits, y[batch])
        grads, _ = head.backward(cache, grad)
        opt.step(head, grads)
    z = head.forward_eval(h[ids])
    rows, _ = nn.cross_entropy_rows(z, y[ids])
    return float(rows.mean())


def train_sensitive_head(clf, dataset, ledger, epochs=10, batch_size=256,
                         lr=1e-3, rng=None, h_cache=None):
    """Cross-entropy training of the sensitive head on annotated instances."""
    if not clf.frozen_body:
        raise StateError("sensitive-head training requires a frozen body")
    ann_ids, ann_a = ledger.annotations()
    if len(ann_ids) == 0:
        raise StateError("sensitive-head training requires annotations")
    if len(np.unique(ann_a)) < 2:
        log.warning("annotated set is single-class; proxy predictions will be constant")
    rng = rng if rng is not None else np.random.default_rng(0)
    h = h_cache if h_cache is not None else clf.embed(dataset.features)
    head = clf.sensitive_head
    opt = nn.Adam(lr=lr)
    ann_ids = np.asarray(ann_ids)
    for _ in range(epochs):
        order = rng.permutation(len(ann_ids))
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            logits, cache = head.forward(h[ann_ids[sel]])
            _, grad = nn.softmax_cross_entropy(logits, ann_a[sel])
            grads, _ = head.backward(cache, grad)
            opt.step(head, grads)
    return head


def head_selection(checkpoints, clf, dataset, metric, h_cache=None):
    """Pick the checkpoint maximizing validation accuracy + fairness score.

    Fairness on validation uses proxy group labels from the sensitive head
    (ground truth stays hidden there). Ties go to the earliest checkpoint.
    Returns (best index, scores).
    """
    if not checkpoints:
        raise ConfigurationError("head selection needs at least one checkpoint")
    h = h_cache if h_cache is not None else clf.embed(dataset.features)
    val = dataset.val_ids()
    proxy = fairness.predict_binary(clf.sensitive_logits(h[val]))
    y_val = dataset.labels[val]
    head = clf.task_head
    saved = [p.copy() for p in head.params()]
    scores = []
    try:
        for params in checkpoints:
            head.set_params(params)
            preds = fairness.predict_binary(head.forward_eval(h[val]))
            rep = fairness.report(preds, y_val, proxy)
            scores.append(rep.accuracy + fairness.fairness_score(rep, metric))
    finally:
        head.set_params(saved)
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best, scores
