"""Group-conditional rates, the EOP / equalized-odds gap metrics, and the
relaxed differentiable rates used by the training regularizer.

Rates that cannot be computed (empty subgroup, zero denominator) are
explicit ``None`` sentinels, never NaN. The binary prediction convention is
``predicted 1 iff logit margin (class-1 logit minus class-0 logit) >= 0``,
matching the sign-function relaxation the regularizer is built on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

GROUPS = (0, 1)
CLASSES = (0, 1)


def predict_binary(logits):
    """Hard binary predictions from 2-column logits (margin >= 0 -> class 1)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ConfigurationError("binary prediction expects 2-column logits")
    return (logits[:, 1] - logits[:, 0] >= 0.0).astype(np.int8)


def _aligned(*arrays):
    arrays = [np.asarray(a) for a in arrays]
    n = arrays[0].shape[0]
    if any(a.ndim != 1 or a.shape[0] != n for a in arrays):
        raise ConfigurationError("rate inputs must be aligned 1-D arrays")
    return arrays


@dataclass
class GroupRates:
    counts: np.ndarray              # [a][y][yhat] nonnegative integers
    tpr: list                       # per group, None when undefined
    fpr: list
    acc: list                       # acc[a][c] = p_a(c, c)
    centralized: list               # centralized[a][c] = p*_a(c, c)
    sizes: list                     # sizes[a][c] = |subgroup (a, y=c)|


def compute_rates(predictions, labels, sensitive, ids=None):
    """Counting-exact per-(group, class) rates.

    Empty subgroups yield None entries. Centralization subtracts the mean of
    the group accuracies available for that class, so a class with a single
    populated group centralizes to 0.0 for it.
    """
    predictions, labels, sensitive = _aligned(predictions, labels, sensitive)
    counts = np.zeros((2, 2, 2), dtype=np.int64)
    for a in GROUPS:
        for y in CLASSES:
            mask = (sensitive == a) & (labels == y)
            counts[a, y, 0] = int(((predictions == 0) & mask).sum())
            counts[a, y, 1] = int(((predictions == 1) & mask).sum())

    def rate(a, y, yhat):
        denom = counts[a, y, 0] + counts[a, y, 1]
        if denom == 0:
            return None
        return counts[a, y, yhat] / denom

    tpr = [rate(a, 1, 1) for a in GROUPS]
    fpr = [rate(a, 0, 1) for a in GROUPS]
    acc = [[rate(a, c, c) for c in CLASSES] for a in GROUPS]
    centralized = [[None, None], [None, None]]
    for c in CLASSES:
        defined = [acc[a][c] for a in GROUPS if acc[a][c] is not None]
        if not defined:
            continue
        center = sum(defined) / len(defined)
        for a in GROUPS:
            if acc[a][c] is not None:
                centralized[a][c] = acc[a][c] - center
    sizes = [[int(counts[a, c, 0] + counts[a, c, 1]) for c in CLASSES] for a in GROUPS]
    return GroupRates(counts=counts, tpr=tpr, fpr=fpr, acc=acc,
                      centralized=centralized, sizes=sizes)


def relaxed_rates(logits, labels, sensitive):
    """Differentiable subgroup rates: mean logit margin per (a, y) subgroup.

    Returns a 2x2 nested list indexed [a][y]; empty subgroups are None. No
    relaxation slope is folded in here; the training loss applies its own
    weight to the squared group differences.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels, sensitive = _aligned(labels, sensitive)
    if logits.shape != (labels.shape[0], 2):
        raise ConfigurationError("relaxed rates expect (n, 2) logits aligned with labels")
    margins = logits[:, 1] - logits[:, 0]
    out = [[None, None], [None, None]]
    for a in GROUPS:
        for y in CLASSES:
            mask = (sensitive == a) & (labels == y)
            if mask.any():
                out[a][y] = float(margins[mask].mean())
    return out


def relaxed_gap(ptilde):
    """Sum over classes of the squared group difference of relaxed rates.

    Classes where either group is undefined are dropped; returns
    (value, dropped_classes).
    """
    value = 0.0
    dropped = []
    for y in CLASSES:
        p0, p1 = ptilde[0][y], ptilde[1][y]
        if p0 is None or p1 is None:
            dropped.append(y)
            continue
        value += (p0 - p1) ** 2
    return value, dropped


def relaxed_gap_grad(logits, labels, sensitive):
    """Relaxed rate gap plus its exact gradient w.r.t. the logits.

    The gap is affine in the logits and squared per class, so the gradient
    is linear; no relaxation weight is applied here. Returns
    (value, dlogits, dropped_classes).
    """
    logits = np.asarray(logits, dtype=np.float64)
    ptilde = relaxed_rates(logits, labels, sensitive)
    value, dropped = relaxed_gap(ptilde)
    labels, sensitive = _aligned(labels, sensitive)
    dlogits = np.zeros_like(logits)
    for y in CLASSES:
        p0, p1 = ptilde[0][y], ptilde[1][y]
        if p0 is None or p1 is None:
            continue
        diff = p0 - p1
        for a, sign in ((0, 1.0), (1, -1.0)):
            mask = (sensitive == a) & (labels == y)
            coef = 2.0 * diff * sign / mask.sum()
            dlogits[mask, 1] += coef
            dlogits[mask, 0] -= coef
    return value, dlogits, dropped


@dataclass
class FairnessReport:
    accuracy: float
    eop: float | None
    delta_tpr: float | None
    delta_fpr: float | None
    delta_eo_signed: float | None
    delta_eo_abs: float | None

    def as_dict(self):
        return {
            "accuracy": self.accuracy,
            "eop": self.eop,
            "delta_tpr": self.delta_tpr,
            "delta_fpr": self.delta_fpr,
            "delta_eo_signed": self.delta_eo_signed,
            "delta_eo_abs": self.delta_eo_abs,
        }


def report(predictions, labels, sensitive):
    """Full fairness report; requires ground-truth sensitive values.

    EOP is TPR0 / TPR1 and comes back None when TPR1 is zero or either TPR is
    undefined. The signed gap is dTPR + dFPR exactly as defined; the absolute
    variant is |dTPR| + |dFPR|.
    """
    predictions, labels, sensitive = _aligned(predictions, labels, sensitive)
    rates = compute_rates(predictions, labels, sensitive)
    accuracy = float((predictions == labels).mean())

    tpr0, tpr1 = rates.tpr
    fpr0, fpr1 = rates.fpr
    if tpr0 is None or tpr1 is None or tpr1 == 0.0:
        eop = None
    else:
        eop = tpr0 / tpr1
    delta_tpr = None if (tpr0 is None or tpr1 is None) else tpr0 - tpr1
    delta_fpr = None if (fpr0 is None or fpr1 is None) else fpr0 - fpr1
    if delta_tpr is None or delta_fpr is None:
        delta_signed = None
        delta_abs = None
    else:
        delta_signed = delta_tpr + delta_fpr
        delta_abs = abs(delta_tpr) + abs(delta_fpr)
    return FairnessReport(
        accuracy=accuracy,
        eop=eop,
        delta_tpr=delta_tpr,
        delta_fpr=delta_fpr,
        delta_eo_signed=delta_signed,
        delta_eo_abs=delta_abs,
    )


def fairness_score(rep, metric):
    """Scalar fairness score on the accuracy scale; higher is fairer.

    "delta_eo" scores 1 - |gap|; "eop" scores the EOP ratio directly.
    Undefined metrics score 0.0 so they never win a selection.
    """
    if metric == "delta_eo":
        return 0.0 if rep.delta_eo_abs is None else 1.0 - rep.delta_eo_abs
    if metric == "eop":
        return 0.0 if rep.eop is None else rep.eop
    raise ConfigurationError(f"unknown fairness metric {metric!r}")
