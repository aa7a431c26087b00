"""Tabular ingestion, the synthetic skewed benchmark, and the annotation oracle.

Input files are comma-separated with a header row. A schema descriptor is a
plain-text key-value file (``key = value`` per line, ``#`` comments):

    name = adult
    target = income
    positive = >50K
    sensitive = sex
    sensitive_rule = equals Male        # or: greater 35
    column age = numeric
    column workclass = categorical
    ...

Feature columns are the ``column`` entries; the target and sensitive columns
are never part of the feature matrix. Sensitive values are binarized by the
rule (1 = privileged) and held by a :class:`SensitiveOracle`; training code
can only see them through an :class:`AnnotationLedger`.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExhausted, ConfigurationError, InputError, StateError

log = logging.getLogger(__name__)

SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST = 0, 1, 2
MISSING_TOKENS = ("", "?", "NA")
DEFAULT_FRACTIONS = (0.25, 0.25, 0.5)


class SensitiveOracle:
    """Holds the ground-truth sensitive attribute and logs every read.

    Reads happen either one instance at a time through a ledger (purpose
    "annotation") or in bulk through :meth:`view` with a whitelisted purpose.
    The read log is what the containment audit inspects.
    """

    PURPOSES = ("annotation", "seeding", "evaluation", "diagnostics", "full_disclosure")

    def __init__(self, values):
        self._values = np.asarray(values, dtype=np.int8)
        if not np.isin(self._values, (0, 1)).all():
            raise InputError("sensitive attribute must be binary 0/1")
        self.read_log: list[tuple[str, int]] = []

    def __len__(self):
        return len(self._values)

    def _reveal(self, instance_id):
        self.read_log.append(("annotation", int(instance_id)))
        return int(self._values[instance_id])

    def view(self, ids, purpose):
        if purpose not in self.PURPOSES or purpose == "annotation":
            raise ConfigurationError(f"purpose {purpose!r} is not whitelisted")
        ids = np.asarray(ids, dtype=np.intp)
        self.read_log.extend((purpose, int(i)) for i in ids)
        return self._values[ids].copy()

    def reads_by_purpose(self):
        counts: dict[str, int] = {}
        for purpose, _ in self.read_log:
            counts[purpose] = counts.get(purpose, 0) + 1
        return counts


class AnnotationLedger:
    """Ordered record of revealed sensitive attributes, capped by a budget."""

    def __init__(self, budget, oracle):
        if budget < 0:
            raise ConfigurationError("budget must be nonnegative")
        self.budget = int(budget)
        self.oracle = oracle
        self.annotated_ids: list[int] = []
        self.values: dict[int, int] = {}

    @property
    def spent(self):
        return len(self.annotated_ids)

    def __contains__(self, instance_id):
        return int(instance_id) in self.values

    def reveal(self, instance_id):
        instance_id = int(instance_id)
        if instance_id in self.values:
            raise StateError(f"instance {instance_id} already annotated")
        if self.spent >= self.budget:
            raise BudgetExhausted(f"budget of {self.budget} annotations is spent")
        a = self.oracle._reveal(instance_id)
        self.annotated_ids.append(instance_id)
        self.values[instance_id] = a
        return a

    def annotations(self):
        """(ids, values) in annotation order."""
        ids = np.asarray(self.annotated_ids, dtype=np.intp)
        vals = np.asarray([self.values[i] for i in self.annotated_ids], dtype=np.int8)
        return ids, vals


def reveal_sensitive(ledger, instance_id):
    """Reveal one instance's sensitive attribute through the ledger."""
    return ledger.reveal(instance_id)


@dataclass
class TabularDataset:
    name: str
    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    oracle: SensitiveOracle
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def _ids(self, tag):
        return np.flatnonzero(self.split == tag)

    def train_ids(self):
        return self._ids(SPLIT_TRAIN)

    def val_ids(self):
        return self._ids(SPLIT_VAL)

    def test_ids(self):
        return self._ids(SPLIT_TEST)


# -- schema -------------------------------------------------------------


@dataclass
class DatasetSchema:
    name: str
    target: str
    positive: str
    sensitive: str
    sensitive_rule: tuple[str, str]
    columns: list[tuple[str, str]]  # (column name, "numeric"|"categorical")


def parse_kv_file(path):
    """Read ``key = value`` lines; '#' starts a comment; returns pairs in order."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            pairs.append((key.strip(), value.strip()))
    return pairs


def parse_schema(path):
    fields = {}
    columns = []
    for key, value in parse_kv_file(path):
        if key.startswith("column "):
            colname = key[len("column "):].strip()
            if value not in ("numeric", "categorical"):
                raise ConfigurationError(f"column {colname!r}: unknown kind {value!r}")
            columns.append((colname, value))
        else:
            fields[key] = value
    for required in ("target", "positive", "sensitive", "sensitive_rule"):
        if required not in fields:
            raise ConfigurationError(f"schema missing {required!r}")
    if not columns:
        raise ConfigurationError("schema declares no feature columns")
    rule_parts = fields["sensitive_rule"].split(None, 1)
    if len(rule_parts) != 2 or rule_parts[0] not in ("equals", "greater"):
        raise ConfigurationError("sensitive_rule must be 'equals VALUE' or 'greater THRESHOLD'")
    return DatasetSchema(
        name=fields.get("name", "dataset"),
        target=fields["target"],
        positive=fields["positive"],
        sensitive=fields["sensitive"],
        sensitive_rule=(rule_parts[0], rule_parts[1]),
        columns=columns,
    )


# -- loading ------------------------------------------------------------


def _assign_splits(n, seed, fractions=DEFAULT_FRACTIONS):
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError("split fractions must sum to 1")
    n_train = math.floor(fractions[0] * n)
    n_val = math.floor(fractions[1] * n)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    split = np.full(n, SPLIT_TEST, dtype=np.int8)
    split[order[:n_train]] = SPLIT_TRAIN
    split[order[n_train:n_train + n_val]] = SPLIT_VAL
    return split


def _binarize_sensitive(values, rule):
    kind, arg = rule
    if kind == "equals":
        return np.asarray([1 if v == arg else 0 for v in values], dtype=np.int8)
    threshold = float(arg)
    out = np.empty(len(values), dtype=np.int8)
    for i, v in enumerate(values):
        try:
            out[i] = 1 if float(v) > threshold else 0
        except ValueError as exc:
            raise InputError(f"sensitive value {v!r} is not numeric") from exc
    return out


def load_tabular(path, schema, split_seed=0, fractions=DEFAULT_FRACTIONS):
    """Load a CSV per the schema into a standardized TabularDataset.

    Rows with a missing value in any used column are rejected (counted in
    meta); rows with the wrong field count are a hard error. Categoricals are
    one-hot encoded over the categories seen in the train split; numerics are
    z-scored with train-split statistics only.
    """
    if isinstance(schema, str):
        schema = parse_schema(schema)

    used_cols = [schema.target, schema.sensitive] + [c for c, _ in schema.columns]
    rows = []
    rejected = 0
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        missing_cols = [c for c in used_cols if c not in header]
        if missing_cols:
            raise ConfigurationError(f"{path}: columns {missing_cols} absent from header")
        idx = {c: header.index(c) for c in used_cols}
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(raw)}")
            record = {c: raw[idx[c]].strip() for c in used_cols}
            if any(record[c] in MISSING_TOKENS for c in used_cols):
                rejected += 1
                continue
            rows.append((lineno, record))
    if not rows:
        raise InputError(f"{path}: no usable rows")
    if rejected:
        log.warning("%s: rejected %d rows with missing values", path, rejected)

    n = len(rows)
    labels = np.asarray(
        [1 if rec[schema.target] == schema.positive else 0 for _, rec in rows],
        dtype=np.int8)
    sensitive = _binarize_sensitive([rec[schema.sensitive] for _, rec in rows],
                                    schema.sensitive_rule)
    split = _assign_splits(n, split_seed, fractions)
    train_rows = split == SPLIT_TRAIN

    blocks = []
    scaler = {}
    categories = {}
    unknown_categories = 0
    for colname, kind in schema.columns:
        raw_values = [rec[colname] for _, rec in rows]
        if kind == "numeric":
            col = np.empty(n, dtype=np.float64)
            for i, ((lineno, _), v) in enumerate(zip(rows, raw_values)):
                try:
                    col[i] = float(v)
                except ValueError as exc:
                    raise InputError(
                        f"{path}:{lineno}: non-numeric value {v!r} in column {colname!r}"
                    ) from exc
            mean = col[train_rows].mean()
            std = col[train_rows].std()
            scaler[colname] = (float(mean), float(std))
            if std == 0.0:
                blocks.append(np.zeros((n, 1)))
            else:
                blocks.append(((col - mean) / std).reshape(n, 1))
        else:
            cats = sorted({v for v, tr in zip(raw_values, train_rows) if tr})
            categories[colname] = cats
            pos = {c: j for j, c in enumerate(cats)}
            block = np.zeros((n, len(cats)))
            for i, v in enumerate(raw_values):
                j = pos.get(v)
                if j is None:
                    unknown_categories += 1
                else:
                    block[i, j] = 1.0
            blocks.append(block)
    if unknown_categories:
        log.warning("%s: %d values outside train-split categories mapped to all-zeros",
                    path, unknown_categories)

    features = np.hstack(blocks)
    ds = TabularDataset(
        name=schema.name,
        features=features,
        labels=labels,
        split=split,
        oracle=SensitiveOracle(sensitive),
        meta={
            "n": n,
            "dim": features.shape[1],
            "n_train": int(train_rows.sum()),
            "n_val": int((split == SPLIT_VAL).sum()),
            "n_test": int((split == SPLIT_TEST).sum()),
            "rejected_rows": rejected,
            "unknown_categories": unknown_categories,
            "scaler": scaler,
            "categories": categories,
            "split_seed": split_seed,
        },
    )
    return ds


# -- synthetic benchmark --------------------------------------------------

SUBGROUP_ORDER = ((0, 1), (0, 0), (1, 1), (1, 0))

DEFAULT_COUNTS = (100, 2000, 1600, 1600)
DEFAULT_MEANS = {
    (0, 1): (-2.0, 1.0),
    (0, 0): (-2.0, -1.0),
    (1, 1): (2.0, 1.0),
    (1, 0): (2.0, -1.0),
}
DEFAULT_SPREAD = 0.7


def make_synthetic(seed, n_per_subgroup=DEFAULT_COUNTS, class_means=None,
                   spread=DEFAULT_SPREAD, fractions=DEFAULT_FRACTIONS):
    """2-D Gaussian blobs, one per (a, y) subgroup; sizes control the skew.

    ``n_per_subgroup`` follows the order (a=0,y=1), (a=0,y=0), (a=1,y=1),
    (a=1,y=0). Deterministic for a fixed seed.
    """
    if class_means is None:
        class_means = DEFAULT_MEANS
    counts = {sg: int(c) for sg, c in zip(SUBGROUP_ORDER, n_per_subgroup)}
    if any(c < 1 for c in counts.values()):
        raise ConfigurationError("every subgroup needs at least one instance")
    for a in (0, 1):
        if tuple(class_means[(a, 1)]) == tuple(class_means[(a, 0)]):
            raise ConfigurationError(f"class means for group {a} must be distinct")

    rng = np.random.default_rng(seed)
    feats, labels, sens = [], [], []
    for (a, y) in SUBGROUP_ORDER:
        c = counts[(a, y)]
        mean = np.asarray(class_means[(a, y)], dtype=np.float64)
        feats.append(mean + spread * rng.standard_normal((c, 2)))
        labels.append(np.full(c, y, dtype=np.int8))
        sens.append(np.full(c, a, dtype=np.int8))
    features = np.vstack(feats)
    labels = np.concatenate(labels)
    sens = np.concatenate(sens)

    order = rng.permutation(len(labels))
    features, labels, sens = features[order], labels[order], sens[order]
    split = _assign_splits(len(labels), rng.integers(2 ** 31), fractions)
    return TabularDataset(
        name="synthetic",
        features=features,
        labels=labels,
        split=split,
        oracle=SensitiveOracle(sens),
        meta={
            "n": len(labels),
            "dim": 2,
            "n_train": int((split == SPLIT_TRAIN).sum()),
            "n_val": int((split == SPLIT_VAL).sum()),
            "n_test": int((split == SPLIT_TEST).sum()),
            "subgroup_counts": counts,
            "seed": seed,
        },
    )


# -- annotation helpers ----------------------------------------------------


def budget_from_ratio(ratio, n_train):
    """Annotation count for a budget expressed as a ratio of the train pool."""
    if not 0 < ratio <= 1:
        raise ConfigurationError("budget ratio must lie in (0, 1]")
    return math.floor(ratio * n_train)


def seed_annotations(dataset, ledger, rng, per_subgroup=2):
    """Stratified initial annotations: up to `per_subgroup` per (a, y) subgroup.

    Stratification needs subgroup membership before the reveal, so it reads
    group values through the whitelisted "seeding" purpose; every selected
    instance is then formally revealed through the ledger and counts against
    its budget.
    """
    train_ids = dataset.train_ids()
    a_view = dataset.oracle.view(train_ids, "seeding")
    y = dataset.labels[train_ids]
    chosen = []
    for (a, yv) in SUBGROUP_ORDER:
        pool = train_ids[(a_view == a) & (y == yv)]
        if pool.size == 0:
            log.warning("seed annotations: subgroup (a=%d, y=%d) empty in train pool", a, yv)
            continue
        k = min(per_subgroup, pool.size, ledger.budget - ledger.spent - len(chosen))
        if k <= 0:
            break
        chosen.extend(int(i) for i in rng.choice(np.sort(pool), size=k, replace=False))
    for i in chosen:
        ledger.reveal(i)
    return chosen
