"""Active instance selection: worst-subgroup targeting plus max-min
coverage, and the baseline selectors it is compared against.

All selectors are deterministic given their inputs; ties break to the
smallest instance id, and subgroup ties follow the fixed order
(a=0,c=0), (0,1), (1,0), (1,1). Distances are exact Euclidean in the
embedding space, computed by full pairwise scans.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fairness
from .errors import ConfigurationError, SelectionError, StateError

log = logging.getLogger(__name__)

SUBGROUP_TIE_ORDER = ((0, 0), (0, 1), (1, 0), (1, 1))


class SelectionState:
    """Annotated/unannotated partition of the train pool plus proxy labels."""

    def __init__(self, train_ids, labels, annotated_ids=()):
        self.train_ids = np.sort(np.asarray(train_ids, dtype=np.intp))
        self.labels = np.asarray(labels)
        self._annotated: list[int] = []
        self._annotated_set: set[int] = set()
        self.proxy: dict[int, int] = {}
        self.proxy_version = -1
        self.last_choice = None
        for i in annotated_ids:
            self.move(i)

    @property
    def annotated(self):
        return np.asarray(self._annotated, dtype=np.intp)

    def unannotated(self):
        return np.setdiff1d(self.train_ids, self.annotated, assume_unique=False)

    def move(self, instance_id):
        instance_id = int(instance_id)
        if instance_id in self._annotated_set:
            raise StateError(f"instance {instance_id} already annotated")
        if instance_id not in set(self.train_ids.tolist()):
            raise ConfigurationError(f"instance {instance_id} is not in the train pool")
        self._annotated.append(instance_id)
        self._annotated_set.add(instance_id)


def refresh_proxy(state, clf, embeddings):
    """Recompute proxy group labels for the unannotated pool from the
    sensitive head; stamps the state with the head's parameter version."""
    ids_u = state.unannotated()
    if ids_u.size:
        proxy = fairness.predict_binary(clf.sensitive_logits(embeddings[ids_u]))
        state.proxy = {int(i): int(p) for i, p in zip(ids_u, proxy)}
    else:
        state.proxy = {}
    state.proxy_version = clf.sensitive_head._version
    return state.proxy


def _require_fresh_proxy(state, clf):
    if state.proxy_version != clf.sensitive_head._version:
        raise StateError("proxy labels are stale; refresh after retraining the sensitive head")
    ids_u = state.unannotated()
    if any(int(i) not in state.proxy for i in ids_u):
        raise StateError("proxy labels missing for part of the unannotated pool")
    return ids_u


# -- distances ------------------------------------------------------------


def _min_dists_to_set(pool_emb, set_emb, chunk=256):
    """Per-pool-point min Euclidean distance to the reference set."""
    out = np.empty(pool_emb.shape[0])
    for start in range(0, pool_emb.shape[0], chunk):
        block = pool_emb[start:start + chunk]
        diff = block[:, None, :] - set_emb[None, :, :]
        out[start:start + chunk] = np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)
    return out


def coverage(embeddings, annotated_ids, pool_ids):
    """Coverage radius of the pool by the annotated set: the max over the
    pool of the min distance to an annotated instance. Returns
    (radius, nearest distances per pool id)."""
    annotated_ids = np.asarray(annotated_ids, dtype=np.intp)
    pool_ids = np.asarray(pool_ids, dtype=np.intp)
    if annotated_ids.size == 0:
        raise ConfigurationError("coverage needs a nonempty annotated set")
    if pool_ids.size == 0:
        return 0.0, np.empty(0)
    dists = _min_dists_to_set(embeddings[pool_ids], embeddings[annotated_ids])
    return float(dists.max()), dists


@dataclass
class CoverageStats:
    delta_all: float
    delta_group: dict = field(default_factory=dict)
    nearest_annotated: object = None

    def validate(self):
        for a, d in self.delta_group.items():
            if d > self.delta_all + 1e-12:
                raise StateError(
                    f"group {a} coverage radius {d} exceeds the pool radius {self.delta_all}")


# -- the two-step selector ---------------------------------------------------


def centralized_accuracy_table(state, clf, dataset, embeddings):
    """Per-(proxy group, class) accuracy over the unannotated pool, plus its
    centralized variant. Returns (acc, centralized, sizes) nested [a][c]."""
    ids_u = _require_fresh_proxy(state, clf)
    if ids_u.size == 0:
        raise SelectionError("unannotated pool is empty")
    preds = fairness.predict_binary(clf.task_logits(embeddings[ids_u]))
    y = dataset.labels[ids_u]
    proxy = np.asarray([state.proxy[int(i)] for i in ids_u], dtype=np.int8)
    rates = fairness.compute_rates(preds, y, proxy)
    return rates.acc, rates.centralized, rates.sizes


def group_select(state, clf, dataset, embeddings):
    """Pick the (group, class) subgroup with the worst centralized accuracy.

    Accuracy is estimated on the unannotated pool with proxy group labels;
    empty subgroups are excluded with a warning. Ties follow the fixed
    subgroup order."""
    _, centralized, sizes = centralized_accuracy_table(state, clf, dataset, embeddings)
    best = None
    for (a, c) in SUBGROUP_TIE_ORDER:
        if sizes[a][c] == 0:
            log.warning("group selection: subgroup (a=%d, c=%d) empty, excluded", a, c)
            continue
        value = centralized[a][c]
        if best is None or value < best[0]:
            best = (value, a, c)
    if best is None:
        raise SelectionError("all subgroups empty; nothing to select")
    return best[1], best[2]


def individual_select(state, embeddings, group):
    """Max-min selection inside a subgroup: among unannotated members of
    `group` (proxy group, class), pick the one farthest from its nearest
    annotated instance. Ties go to the smallest id."""
    a, c = group
    ids_u = state.unannotated()
    if state.annotated.size == 0:
        raise StateError("individual selection needs a nonempty annotated set")
    candidates = np.asarray(
        [int(i) for i in ids_u
         if state.proxy.get(int(i)) == a and int(state.labels[i]) == c],
        dtype=np.intp)
    if candidates.size == 0:
        raise SelectionError(f"subgroup (a={a}, c={c}) has no unannotated candidates")
    dists = _min_dists_to_set(embeddings[candidates], embeddings[state.annotated])
    return int(candidates[int(np.argmax(dists))])


# -- baseline selectors -------------------------------------------------------


def select_random(state, rng):
    """Uniform draw from the unannotated pool."""
    ids_u = state.unannotated()
    if ids_u.size == 0:
        raise SelectionError("unannotated pool is empty")
    return int(rng.choice(ids_u))


def select_uncertainty(state, clf, embeddings):
    """Maximum prediction-entropy instance (bits, 0 log 0 treated as 0)."""
    ids_u = state.unannotated()
    if ids_u.size == 0:
        raise SelectionError("unannotated pool is empty")
    probs = nn_softmax(clf.task_logits(embeddings[ids_u]))
    ent = entropy_bits(probs)
    return int(ids_u[int(np.argmax(ent))])


def select_coreset(state, embeddings):
    """Max-min selection over the whole unannotated pool (no group filter)."""
    ids_u = state.unannotated()
    if ids_u.size == 0:
        raise SelectionError("unannotated pool is empty")
    if state.annotated.size == 0:
        raise StateError("core-set selection needs a nonempty annotated set")
    dists = _min_dists_to_set(embeddings[ids_u], embeddings[state.annotated])
    return int(ids_u[int(np.argmax(dists))])


def group_only(state, clf, dataset, embeddings, rng):
    """Ablation: group selection, then a uniform draw within the subgroup."""
    a, c = group_select(state, clf, dataset, embeddings)
    ids_u = state.unannotated()
    pool = np.asarray(
        [int(i) for i in ids_u
         if state.proxy.get(int(i)) == a and int(state.labels[i]) == c],
        dtype=np.intp)
    if pool.size == 0:
        raise SelectionError(f"subgroup (a={a}, c={c}) has no unannotated candidates")
    return int(rng.choice(pool)), (a, c)


def individual_only(state, embeddings):
    """Ablation: max-min over the whole pool; identical to select_coreset,
    kept as a named alias so the ablation is first-class."""
    return select_coreset(state, embeddings)


# -- small numeric helpers -----------------------------------------------------


def nn_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def entropy_bits(probs):
    terms = np.zeros_like(probs)
    mask = probs > 0.0
    terms[mask] = probs[mask] * np.log2(probs[mask])
    return -terms.sum(axis=1)
