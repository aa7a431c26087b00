"""End-to-end comparison trainers: vanilla, group-reweighted min-max
training, the failure-reweighting pair, fairness-aware active selection,
and the one-shot semi-supervised variant.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fairness, mitigation, nn
from .errors import ConfigurationError, SelectionError
from .mitigation import PodConfig

log = logging.getLogger(__name__)


def train_vanilla(clf, dataset, epochs=50, batch_size=256, lr=1e-3, rng=None):
    """Plain cross-entropy training of body + head, nothing frozen."""
    return mitigation.pretrain(clf, dataset, epochs=epochs, batch_size=batch_size,
                               lr=lr, rng=rng, freeze=False)


# -- group-reweighted min-max training ----------------------------------------


@dataclass
class DroState:
    q: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.5]))
    eta_q: float = 0.01


def dro_reweight(q, group_losses, eta_q):
    """Exponentiated-gradient ascent step on the group weights; the result
    stays exactly on the simplex via renormalization."""
    new = q * np.exp(eta_q * np.asarray(group_losses, dtype=np.float64))
    return new / new.sum()


def train_group_dro(clf, dataset, dro, epochs=50, batch_size=256, lr=1e-3, rng=None):
    """Min-max training against the worst sensitive group.

    Consumes ground-truth group membership for every train instance (the
    full-annotation reference point), read through the oracle's
    full-disclosure purpose. Per batch: update the group weights from the
    per-group mean losses, then take a weighted gradient step.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    ids = dataset.train_ids()
    a_full = dataset.oracle.view(ids, "full_disclosure")
    a_by_id = dict(zip(ids.tolist(), a_full.tolist()))
    for a in (0, 1):
        if not (a_full == a).any():
            raise ConfigurationError(f"group {a} empty in the train pool")

    body, head = clf.body, clf.task_head
    opt_b, opt_h = nn.Adam(lr=lr), nn.Adam(lr=lr)
    x, y = dataset.features, dataset.labels
    for _ in range(epochs):
        order = ids.copy()
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            a_batch = np.asarray([a_by_id[int(i)] for i in batch], dtype=np.int8)
            h, cache_b = body.forward(x[batch])
            z, cache_h = head.forward(h)
            rows, grad_rows = nn.cross_entropy_rows(z, y[batch])
            group_losses = np.zeros(2)
            weights = np.zeros(len(batch))
            counts = [(a_batch == a).sum() for a in (0, 1)]
            for a in (0, 1):
                if counts[a]:
                    group_losses[a] = rows[a_batch == a].mean()
            dro.q = dro_reweight(dro.q, group_losses, dro.eta_q)
            for a in (0, 1):
                if counts[a]:
                    weights[a_batch == a] = dro.q[a] / counts[a]
            grad = grad_rows * weights[:, None]
            grads_h, grad_h_in = head.backward(cache_h, grad)
            grads_b, _ = body.backward(cache_b, grad_h_in)
            opt_h.step(head, grads_h)
            opt_b.step(body, grads_b)
    return clf


# -- failure-reweighting pair ---------------------------------------------------


@dataclass
class LffState:
    biased: nn.DenseNet
    debiased: nn.DenseNet
    q_gce: float = 2.5

    @classmethod
    def build(cls, input_dim, embed_dim=32, head_hidden=32, task_layers=2,
              dropout=0.5, q_gce=2.5, seed=0):
        dims = [input_dim, embed_dim] + [head_hidden] * (task_layers - 1) + [2]
        ss = np.random.SeedSequence(seed)
        s_b, s_d = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
        return cls(biased=nn.DenseNet(dims, dropout_prob=dropout, seed=s_b),
                   debiased=nn.DenseNet(dims, dropout_prob=dropout, seed=s_d),
                   q_gce=q_gce)


def gce_rows(logits, labels, q):
    """Generalized cross-entropy (1 - p_y^q) / q per row and its logit
    gradient; emphasizes instances the model already predicts confidently."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    probs = nn.softmax(logits)
    p_y = probs[np.arange(len(labels)), labels]
    rows = (1.0 - p_y ** q) / q
    grad_rows = probs.copy()
    grad_rows[np.arange(len(labels)), labels] -= 1.0
    grad_rows *= (p_y ** q)[:, None]
    return rows, grad_rows


def gce_loss(logits, labels, q):
    rows, grad_rows = gce_rows(logits, labels, q)
    return rows.mean(), grad_rows / len(rows)


def lff_weights(loss_biased, loss_debiased):
    """Per-instance weight l_B / (l_B + l_D); 0/0 is defined as 0.5."""
    denom = loss_biased + loss_debiased
    out = np.full_like(denom, 0.5)
    nonzero = denom > 0.0
    out[nonzero] = loss_biased[nonzero] / denom[nonzero]
    return out


def train_lff(dataset, state, epochs=50, batch_size=256, lr=1e-3, rng=None,
              use_true_labels=False):
    """Simultaneous training of the biased and debiased models.

    The biased model minimizes the generalized cross-entropy on the true
    labels; the debiased model minimizes cross-entropy reweighted by
    l_B / (l_B + l_D). Following the published formulation verbatim, the
    reweighted losses use the biased model's predicted labels; pass
    use_true_labels=True for the conventional ground-truth variant. No
    sensitive annotations are consumed anywhere.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    ids = dataset.train_ids()
    x, y = dataset.features, dataset.labels
    opt_b, opt_d = nn.Adam(lr=lr), nn.Adam(lr=lr)
    for _ in range(epochs):
        order = ids.copy()
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            zb, cache_b = state.biased.forward(x[batch])
            zd, cache_d = state.debiased.forward(x[batch])
            targets = y[batch] if use_true_labels else fairness.predict_binary(zb)
            _, gce_grad = gce_loss(zb, y[batch], state.q_gce)
            rows_b, _ = nn.cross_entropy_rows(zb, targets)
            rows_d, grad_rows_d = nn.cross_entropy_rows(zd, targets)
            w = lff_weights(rows_b, rows_d)
            grad_d = grad_rows_d * (w / len(batch))[:, None]
            grads_b, _ = state.biased.backward(cache_b, gce_grad)
            grads_d, _ = state.debiased.backward(cache_d, grad_d)
            opt_b.step(state.biased, grads_b)
            opt_d.step(state.debiased, grads_d)
    return state.debiased


# -- fairness-aware active selection --------------------------------------------


def fal_score(alpha, accuracy, fairness_now, fairness_prev):
    """Candidate score: alpha * accuracy + (1 - alpha) * fairness gain.

    At alpha = 1 this reduces to accuracy-only scoring."""
    return alpha * accuracy + (1.0 - alpha) * (fairness_now - fairness_prev)


def _fal_fairness(head, h, ids_s, labels, a_by_id, metric="delta_eo"):
    """Fairness score of the head measured on the annotated set (the only
    place ground-truth groups are available to this baseline)."""
    ids_s = np.asarray(ids_s, dtype=np.intp)
    preds = fairness.predict_binary(head.forward_eval(h[ids_s]))
    a = np.asarray([a_by_id[int(i)] for i in ids_s], dtype=np.int8)
    rep = fairness.report(preds, labels[ids_s], a)
    return fairness.fairness_score(rep, metric)


def _fal_train_on(head, h, ids, labels, epochs, batch_size, lr, rng):
    opt = nn.Adam(lr=lr)
    ids = np.asarray(ids, dtype=np.intp)
    for _ in range(epochs):
        order = rng.permutation(len(ids))
        for start in range(0, len(order), batch_size):
            sel = ids[order[start:start + batch_size]]
            logits, cache = head.forward(h[sel])
            _, grad = nn.softmax_cross_entropy(logits, labels[sel])
            grads, _ = head.backward(cache, grad)
            opt.step(head, grads)


def train_fal(clf, dataset, ledger, alpha, rng=None, probe_cap=50, probe_epochs=1,
              retrain_epochs=10, batch_size=256, lr=1e-3, h_cache=None):
    """Budgeted selection scored by alpha * accuracy + (1-alpha) * fairness gain.

    Each candidate is probed with a short cross-entropy fine-tune of a head
    copy on the annotated set plus the candidate (labels are known; the
    candidate's group is not, so the fairness term is measured on the
    annotated set). Probing every unannotated instance is quadratic, so a
    random sample of at most `probe_cap` candidates is scored per round.
    The classifier itself trains by cross-entropy on the annotated set only.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigurationError("alpha must lie in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng(0)
    h = h_cache if h_cache is not None else clf.embed(dataset.features)
    head = clf.task_head
    labels = dataset.labels
    val = dataset.val_ids()

    def annotated_ids():
        ids, _ = ledger.annotations()
        return ids

    def val_accuracy(candidate_head):
        preds = fairness.predict_binary(candidate_head.forward_eval(h[val]))
        return float((preds == labels[val]).mean())

    train_pool = set(dataset.train_ids().tolist())
    _fal_train_on(head, h, annotated_ids(), labels, retrain_epochs, batch_size, lr, rng)
    prev_fair = _fal_fairness(head, h, annotated_ids(), labels, ledger.values)

    while ledger.spent < ledger.budget:
        ids_s = annotated_ids()
        pool = np.asarray(sorted(train_pool - set(ids_s.tolist())), dtype=np.intp)
        if pool.size == 0:
            log.warning("selection pool exhausted before the budget")
            break
        sample = np.sort(rng.choice(pool, size=min(probe_cap, pool.size), replace=False))
        best_id, best_score = None, -np.inf
        for cand in sample:
            probe = head.copy(seed=int(cand))
            _fal_train_on(probe, h, np.append(ids_s, cand), labels,
                          probe_epochs, batch_size, lr, np.random.default_rng(int(cand)))
            acc = val_accuracy(probe)
            fair = _fal_fairness(probe, h, ids_s, labels, ledger.values)
            score = fal_score(alpha, acc, fair, prev_fair)
            if score > best_score:
                best_id, best_score = int(cand), score
        if best_id is None:
            raise SelectionError("no candidate could be scored")
        ledger.reveal(best_id)
        _fal_train_on(head, h, annotated_ids(), labels, retrain_epochs, batch_size, lr, rng)
        prev_fair = _fal_fairness(head, h, annotated_ids(), labels, ledger.values)
    return clf


# -- one-shot semi-supervised mitigation -----------------------------------------


def train_ssbm(clf, dataset, budget, rng, pod_config=None, ledger=None, max_epochs=100):
    """Spend the whole budget at once uniformly at random, then run the
    hybrid-loss training to convergence. With a zero budget there is nothing
    to regularize and training reduces to plain cross-entropy on the head.

    Returns (classifier, ledger) so budget audits can inspect the spend.
    """
    from .data import AnnotationLedger  # local import to avoid a cycle at module load

    if pod_config is None:
        pod_config = PodConfig(lam=1.0, epochs=max_epochs)
    else:
        pod_config = PodConfig(lam=pod_config.lam, epochs=max_epochs,
                               batch_size=pod_config.batch_size, lr=pod_config.lr,
                               tol=pod_config.tol)
    if ledger is None:
        ledger = AnnotationLedger(budget, dataset.oracle)
    pool = np.sort(np.asarray([i for i in dataset.train_ids() if i not in ledger],
                              dtype=np.intp))
    take = min(budget, pool.size, ledger.budget - ledger.spent)
    if take:
        for i in rng.choice(pool, size=take, replace=False):
            ledger.reveal(int(i))
    h = clf.embed(dataset.features)
    if ledger.spent:
        mitigation.pod_train(clf, dataset, ledger, pod_config, rng, h_cache=h)
    else:
        opt = nn.Adam(lr=pod_config.lr)
        prev = np.inf
        for _ in range(pod_config.epochs):
            ce = mitigation.head_ce_epoch(clf, dataset, pod_config, opt, rng, h_cache=h)
            if prev - ce < pod_config.tol:
                break
            prev = ce
    return clf, ledger
