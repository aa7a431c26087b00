import numpy as np
import pytest

from fairactive import data, nn, selection
from fairactive.data import SPLIT_TRAIN
from fairactive.errors import SelectionError, StateError
from fairactive.mitigation import FairClassifier
from fairactive.selection import (SelectionState, centralized_accuracy_table,
                                  coverage, entropy_bits, group_only, group_select,
                                  individual_only, individual_select, refresh_proxy,
                                  select_coreset, select_random, select_uncertainty)


# -- brute-force oracles ----------------------------------------------------


def brute_max_min(candidate_ids, annotated_ids, emb):
    best_id, best_d = None, -1.0
    for i in candidate_ids:
        dmin = min(float(np.sqrt(((emb[i] - emb[j]) ** 2).sum()))
                   for j in annotated_ids)
        if dmin > best_d:
            best_d, best_id = dmin, int(i)
    return best_id, best_d


def brute_coverage(pool_ids, annotated_ids, emb):
    return max(min(float(np.sqrt(((emb[i] - emb[j]) ** 2).sum()))
                   for j in annotated_ids) for i in pool_ids)


def make_state(n, annotated, labels=None):
    labels = labels if labels is not None else np.zeros(n, dtype=np.int8)
    return SelectionState(np.arange(n), labels, annotated_ids=annotated)


# -- selection state -----------------------------------------------------------


def test_state_partition_invariants():
    st = make_state(10, [3, 7])
    assert set(st.annotated.tolist()) == {3, 7}
    assert set(st.unannotated().tolist()) == set(range(10)) - {3, 7}
    st.move(0)
    assert 0 in st.annotated.tolist() and 0 not in st.unannotated().tolist()
    with pytest.raises(StateError):
        st.move(0)


# -- individual selection ---------------------------------------------------------


def test_individual_select_worked_example():
    # S = {(0,0)}, candidates {(1,0), (3,0), (2,2)}: min distances 1, 3, sqrt(8)
    emb = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0], [2.0, 2.0]])
    st = make_state(4, [0], labels=np.array([0, 1, 1, 1], dtype=np.int8))
    st.proxy = {1: 0, 2: 0, 3: 0}
    st.proxy_version = 0
    chosen = individual_select(st, emb, (0, 1))
    assert chosen == 2


def test_individual_select_singleton_candidate():
    emb = np.array([[0.0, 0.0], [1.0, 1.0]])
    st = make_state(2, [0], labels=np.array([0, 1], dtype=np.int8))
    st.proxy = {1: 1}
    chosen = individual_select(st, emb, (1, 1))
    assert chosen == 1


def test_individual_select_skips_coincident_candidates():
    emb = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 0.0]])
    st = make_state(3, [0], labels=np.ones(3, dtype=np.int8))
    st.proxy = {1: 0, 2: 0}
    assert individual_select(st, emb, (0, 1)) == 2


def test_individual_select_matches_brute_force_on_random_geometries():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(12, 120))
        emb = rng.standard_normal((n, int(rng.integers(2, 8))))
        ann = rng.choice(n, size=int(rng.integers(1, 6)), replace=False)
        st = make_state(n, [int(i) for i in ann], labels=np.ones(n, dtype=np.int8))
        ids_u = st.unannotated()
        st.proxy = {int(i): 0 for i in ids_u}
        chosen = individual_select(st, emb, (0, 1))
        expect, _ = brute_max_min(ids_u, st.annotated, emb)
        assert chosen == expect


def test_individual_select_empty_group_is_selection_error():
    emb = np.zeros((3, 2))
    st = make_state(3, [0], labels=np.zeros(3, dtype=np.int8))
    st.proxy = {1: 0, 2: 0}
    with pytest.raises(SelectionError):
        individual_select(st, emb, (1, 1))


# -- coverage ----------------------------------------------------------------------


def test_coverage_single_pair():
    emb = np.array([[0.0, 0.0], [2.0, 0.0]])
    delta, _ = coverage(emb, [0], [0, 1])
    assert delta == 2.0


def test_coverage_full_annotation_is_zero():
    emb = np.random.default_rng(1).standard_normal((10, 3))
    delta, _ = coverage(emb, list(range(10)), list(range(10)))
    assert delta == 0.0


def test_coverage_matches_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(20, 200))
        emb = rng.standard_normal((n, 4))
        ann = rng.choice(n, size=int(rng.integers(1, 20)), replace=False)
        delta, _ = coverage(emb, ann, np.arange(n))
        assert delta == brute_coverage(range(n), ann, emb)


def test_coverage_never_increases_as_annotations_grow():
    rng = np.random.default_rng(3)
    emb = rng.standard_normal((60, 3))
    pool = np.arange(60)
    ann = [0]
    prev, _ = coverage(emb, ann, pool)
    for i in range(1, 25):
        ann.append(i)
        cur, _ = coverage(emb, ann, pool)
        assert cur <= prev + 1e-12
        prev = cur


# -- group selection ----------------------------------------------------------------


def _margin_head(u0, u1, b):
    head = nn.DenseNet([2, 2], ["linear"], seed=0)
    head.set_params([np.array([[0.0, u0], [0.0, u1]]), np.array([0.0, b])])
    return head


def _crafted_group_setup(acc_table, per_group=50):
    """Build (state, clf, dataset, emb) whose per-(proxy a, y=c) accuracy on
    the unannotated pool matches acc_table exactly.

    Features are (first coord 2.0 => predicted 1, 0.5 => predicted 0); the
    task head margin is h0 - 1. Proxies are assigned directly.
    """
    feats, labels, proxy = [], [], []
    for (a, c), acc in acc_table.items():
        correct = round(acc * per_group)
        for k in range(per_group):
            right = k < correct
            pred1 = (c == 1) == right
            feats.append([2.0 if pred1 else 0.5, 0.0])
            labels.append(c)
            proxy.append(a)
    feats = np.asarray(feats)
    labels = np.asarray(labels, dtype=np.int8)
    n = len(labels)
    ds = data.TabularDataset(
        "crafted", feats, labels, np.full(n, SPLIT_TRAIN, dtype=np.int8),
        data.SensitiveOracle(np.zeros(n, dtype=np.int8)), meta={"n": n})
    body = nn.DenseNet([2, 2], ["relu"], seed=0)
    body.set_params([np.eye(2), np.zeros(2)])
    clf = FairClassifier(body, _margin_head(1.0, 0.0, -1.0),
                         nn.DenseNet([2, 2], ["linear"], seed=0))
    clf.freeze_body()
    st = SelectionState(np.arange(n), labels)
    st.proxy = {i: int(p) for i, p in enumerate(proxy)}
    st.proxy_version = clf.sensitive_head._version
    emb = clf.embed(feats)
    return st, clf, ds, emb


def test_group_select_hand_centered_example():
    # accuracies 0.5 / 0.9 / 0.92 / 0.88: centralized minimum is (a=0, c=1)
    table = {(0, 1): 0.5, (0, 0): 0.9, (1, 1): 0.92, (1, 0): 0.88}
    st, clf, ds, emb = _crafted_group_setup(table)
    acc, centralized, _ = centralized_accuracy_table(st, clf, ds, emb)
    assert abs(centralized[0][1] - (0.5 - 0.71)) < 1e-12
    assert group_select(st, clf, ds, emb) == (0, 1)


def test_group_select_tie_breaks_in_fixed_order():
    table = {(0, 1): 0.8, (0, 0): 0.8, (1, 1): 0.8, (1, 0): 0.8}
    st, clf, ds, emb = _crafted_group_setup(table)
    assert group_select(st, clf, ds, emb) == (0, 0)


def test_group_select_dominant_worst_group():
    table = {(0, 1): 1.0, (0, 0): 1.0, (1, 1): 0.0, (1, 0): 1.0}
    st, clf, ds, emb = _crafted_group_setup(table)
    assert group_select(st, clf, ds, emb) == (1, 1)


def test_group_select_invariant_to_constant_accuracy_shifts():
    base = {(0, 1): 0.50, (0, 0): 0.90, (1, 1): 0.92, (1, 0): 0.88}
    shifted = {k: v + 0.06 for k, v in base.items()}
    st1, clf1, ds1, emb1 = _crafted_group_setup(base)
    st2, clf2, ds2, emb2 = _crafted_group_setup(shifted)
    assert group_select(st1, clf1, ds1, emb1) == group_select(st2, clf2, ds2, emb2)


def test_group_select_matches_hand_centering_on_random_tables():
    rng = np.random.default_rng(4)
    order = [(0, 0), (0, 1), (1, 0), (1, 1)]
    for _ in range(50):
        table = {key: int(rng.integers(0, 51)) / 50 for key in order}
        st, clf, ds, emb = _crafted_group_setup(table)
        # independent hand centering, same tie order, strict improvement only
        expect, expect_val = None, None
        for (a, c) in order:
            center = (table[(0, c)] + table[(1, c)]) / 2.0
            val = table[(a, c)] - center
            if expect_val is None or val < expect_val:
                expect, expect_val = (a, c), val
        assert group_select(st, clf, ds, emb) == expect


def test_group_select_requires_fresh_proxy():
    table = {(0, 1): 0.5, (0, 0): 0.9, (1, 1): 0.9, (1, 0): 0.9}
    st, clf, ds, emb = _crafted_group_setup(table)
    st.proxy_version -= 1
    with pytest.raises(StateError):
        group_select(st, clf, ds, emb)


def test_proxy_consistency_with_perfect_sensitive_head():
    # groups on separate axes: the linear sensitive head is a perfect oracle,
    # so the proxy partition equals the ground-truth partition
    rng = np.random.default_rng(5)
    n = 80
    a_true = rng.integers(0, 2, size=n).astype(np.int8)
    feats = np.zeros((n, 2))
    feats[a_true == 0, 0] = 1 + rng.random((a_true == 0).sum())
    feats[a_true == 1, 1] = 1 + rng.random((a_true == 1).sum())
    labels = rng.integers(0, 2, size=n).astype(np.int8)
    ds = data.TabularDataset("axes", feats, labels,
                             np.full(n, SPLIT_TRAIN, dtype=np.int8),
                             data.SensitiveOracle(a_true), meta={"n": n})
    body = nn.DenseNet([2, 2], ["relu"], seed=0)
    body.set_params([np.eye(2), np.zeros(2)])
    sens = nn.DenseNet([2, 2], ["linear"], seed=0)
    sens.set_params([np.array([[0.0, -1.0], [0.0, 1.0]]), np.zeros(2)])
    clf = FairClassifier(body, _margin_head(1.0, 1.0, -1.0), sens)
    clf.freeze_body()
    st = SelectionState(np.arange(n), labels)
    emb = clf.embed(feats)
    refresh_proxy(st, clf, emb)
    assert all(st.proxy[int(i)] == a_true[i] for i in st.unannotated())


# -- baseline selectors ----------------------------------------------------------------


def test_select_random_singleton_and_reproducible():
    st = make_state(4, [0, 1, 2])
    assert select_random(st, np.random.default_rng(0)) == 3
    st2 = make_state(50, [0])
    seq1 = [select_random(st2, np.random.default_rng(9)) for _ in range(5)]
    seq2 = [select_random(st2, np.random.default_rng(9)) for _ in range(5)]
    assert seq1 == seq2


def test_select_random_is_uniform_within_3_sigma():
    st = make_state(21, [20])
    rng = np.random.default_rng(7)
    draws = 10_000
    counts = np.zeros(20)
    for _ in range(draws):
        counts[select_random(st, rng)] += 1
    p = 1.0 / 20
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.abs(counts - draws * p).max() < 3 * sigma + 1e-9


def _entropy_setup(margins):
    feats = np.column_stack([np.asarray(margins, dtype=float),
                             np.zeros(len(margins))])
    # head margin equals the raw first coordinate (identity body needs
    # nonneg inputs, so shift by a constant and undo it in the bias)
    shift = float(10.0 - min(0.0, np.min(margins)))
    feats[:, 0] += shift
    n = len(margins)
    labels = np.zeros(n, dtype=np.int8)
    ds = data.TabularDataset("m", feats, labels, np.full(n, SPLIT_TRAIN, dtype=np.int8),
                             data.SensitiveOracle(np.zeros(n, dtype=np.int8)),
                             meta={"n": n})
    body = nn.DenseNet([2, 2], ["relu"], seed=0)
    body.set_params([np.eye(2), np.zeros(2)])
    clf = FairClassifier(body, _margin_head(1.0, 0.0, -shift),
                         nn.DenseNet([2, 2], ["linear"], seed=0))
    clf.freeze_body()
    st = SelectionState(np.arange(n), labels, annotated_ids=[n - 1])
    return st, clf, clf.embed(feats)


def test_select_uncertainty_prefers_even_odds():
    # margins 0 (p=.5/.5) vs ln(1/9) (p=.1/.9): entropy 1.0 vs ~0.469
    st, clf, emb = _entropy_setup([np.log(1 / 9), 0.0, np.log(9)])
    assert select_uncertainty(st, clf, emb) == 1


def test_select_uncertainty_handles_saturated_probabilities():
    # last instance is the annotated placeholder; ids 0/1 saturate exactly
    st, clf, emb = _entropy_setup([-2000.0, 2000.0, 0.5, 3000.0])
    probs = selection.nn_softmax(clf.task_logits(emb[:2]))
    assert probs[0, 1] == 0.0 and probs[1, 0] == 0.0
    assert entropy_bits(probs).tolist() == [0.0, 0.0]
    assert select_uncertainty(st, clf, emb) == 2


def test_select_uncertainty_matches_brute_force_scan():
    rng = np.random.default_rng(8)
    margins = rng.standard_normal(40) * 3
    st, clf, emb = _entropy_setup(list(margins))
    ids_u = st.unannotated()
    probs = selection.nn_softmax(clf.task_logits(emb[ids_u]))
    ent = entropy_bits(probs)
    expect = int(ids_u[int(np.argmax(ent))])
    # independent scan
    best, best_h = None, -1.0
    for i, p in zip(ids_u, probs):
        h = 0.0
        for v in p:
            if v > 0:
                h -= v * np.log2(v)
        if h > best_h:
            best_h, best = h, int(i)
    assert select_uncertainty(st, clf, emb) == expect == best


def test_select_coreset_and_alias():
    rng = np.random.default_rng(10)
    for _ in range(50):
        n = int(rng.integers(10, 100))
        emb = rng.standard_normal((n, 3))
        ann = [int(i) for i in rng.choice(n, size=int(rng.integers(1, 5)),
                                          replace=False)]
        st = make_state(n, ann)
        chosen = select_coreset(st, emb)
        expect, _ = brute_max_min(st.unannotated(), st.annotated, emb)
        assert chosen == expect
        assert individual_only(st, emb) == chosen


def test_select_coreset_avoids_duplicate_points():
    emb = np.array([[0.0, 0.0], [0.0, 0.0], [4.0, 0.0]])
    st = make_state(3, [0])
    assert select_coreset(st, emb) == 2


def test_group_only_draws_uniformly_within_selected_group():
    table = {(0, 1): 0.0, (0, 0): 1.0, (1, 1): 1.0, (1, 0): 1.0}
    st, clf, ds, emb = _crafted_group_setup(table, per_group=10)
    chosen, group = group_only(st, clf, ds, emb, np.random.default_rng(0))
    assert group == (0, 1)
    assert st.proxy[chosen] == 0 and int(ds.labels[chosen]) == 1
    again, _ = group_only(st, clf, ds, emb, np.random.default_rng(0))
    assert again == chosen
