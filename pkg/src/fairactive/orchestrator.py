"""Experiment harness: the debias/annotate loop, baseline dispatch, sweeps,
and the on-disk artifact formats.

Artifacts (all plain text) written per run when an output directory is set:

* ``results.jsonl``  — one JSON object per line; ``record`` is either
  "iteration" or "summary". Every record carries {method, dataset, lambda,
  seed, iteration, spent, accuracy, eop, delta_eo_signed, delta_eo_abs,
  delta_tpr, delta_fpr, N_sel_group, delta_cover_group}; summaries add run
  metadata (n, n_train, budget, selected_iteration, fairness_metric).
* ``trace.jsonl``    — per-annotation diagnostics: selected subgroup, chosen
  id, the annotated count of the selected group, its coverage radius, and
  the max cross-entropy over the unannotated pool.
* ``ledger.txt``     — ``id a`` per line in annotation order.
* ``embeddings.txt`` — ``# id y a h0 ... h{M-1}`` header, one train instance
  per line (the plotting component's input).
* ``head_NNNN.txt``  — task-head checkpoint per iteration (nn checkpoint
  format).
"""
from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, data, fairness, mitigation, nn, selection
from .errors import ConfigurationError, SelectionError, StateError
from .mitigation import FairClassifier, PodConfig

log = logging.getLogger(__name__)

METHODS = ("apod", "ssbm", "pod_rs", "pod_al", "pod_ca", "pod_group_only",
           "pod_individual_only", "vanilla", "group_dro", "lff", "fal")

BUDGETED_METHODS = ("apod", "ssbm", "pod_rs", "pod_al", "pod_ca",
                    "pod_group_only", "pod_individual_only", "fal")

OUTDIR_ENV = "FAIRACTIVE_OUTDIR"

DATASET_DEFAULTS = {
    "adult": dict(embed_dim=64, head_hidden=32, task_layers=2,
                  metric="delta_eo", budget_ratio=0.004),
    "meps": dict(embed_dim=32, head_hidden=32, task_layers=3,
                 metric="eop", budget_ratio=0.008),
    "loan_default": dict(embed_dim=64, head_hidden=32, task_layers=2,
                         metric="eop", budget_ratio=0.004),
    "german": dict(embed_dim=32, head_hidden=32, task_layers=3,
                   metric="eop", budget_ratio=0.02),
    "synthetic": dict(embed_dim=16, head_hidden=32, task_layers=2,
                      metric="delta_eo", budget_ratio=0.05),
}


@dataclass
class ExperimentConfig:
    dataset: str
    method: str
    lam: float = 1.0
    budget: int | None = None          # active annotations beyond the seed set
    budget_ratio: float | None = None  # of the train split; used when budget is None
    seeds: tuple = (0,)
    schema_path: str | None = None
    data_path: str | None = None
    pretrain_epochs: int = 50
    pod_epochs: int = 10
    fa_epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-3
    dropout: float = 0.5
    seed_per_subgroup: int = 2
    embed_dim: int | None = None
    head_hidden: int | None = None
    task_layers: int | None = None
    metric: str | None = None
    alpha: float = 0.5     # fal trade-off
    eta_q: float = 0.01    # group_dro weight step
    q_gce: float = 2.5     # lff exponent
    outdir: str | None = None
    save_checkpoints: bool = True
    synthetic_counts: tuple = data.DEFAULT_COUNTS
    synthetic_spread: float = data.DEFAULT_SPREAD

    def resolved(self):
        """Fill architecture/metric/budget defaults from the dataset table."""
        cfg = replace(self)
        defaults = DATASET_DEFAULTS.get(cfg.dataset, DATASET_DEFAULTS["synthetic"])
        for name in ("embed_dim", "head_hidden", "task_layers", "metric"):
            if getattr(cfg, name) is None:
                setattr(cfg, name, defaults[name])
        if cfg.budget is None and cfg.budget_ratio is None:
            cfg.budget_ratio = defaults["budget_ratio"]
        cfg.validate()
        return cfg

    def validate(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.budget_ratio is not None and not 0 < self.budget_ratio <= 1:
            raise ConfigurationError("budget ratio must lie in (0, 1]")
        if self.method == "fal" and not 0 <= self.alpha <= 1:
            raise ConfigurationError("fal requires alpha in [0, 1]")
        if self.dataset not in DATASET_DEFAULTS and self.dataset != "synthetic":
            if self.data_path is None or self.schema_path is None:
                raise ConfigurationError(
                    "unknown dataset: provide data_path and schema_path")

    def outdir_resolved(self):
        return os.environ.get(OUTDIR_ENV, self.outdir)


class BoundTrace:
    """Per-annotation diagnostics with the documented growth invariants.

    `initial_counts` seeds the per-group annotated counts so the increment
    check also holds for the first entry after the seed annotations.
    """

    def __init__(self, initial_counts=(0, 0)):
        self.entries: list[dict] = []
        self._group_counts = {0: int(initial_counts[0]), 1: int(initial_counts[1])}

    def append(self, iteration, group, chosen_id, revealed_a, n_group,
               delta_group, max_unannotated_loss):
        expected = self._group_counts[group[0]] + (1 if revealed_a == group[0] else 0)
        if revealed_a == group[0] and n_group != expected:
            raise StateError(
                f"annotated count for group {group[0]} is {n_group}, expected {expected}")
        if self.entries:
            prev = self.entries[-1]
            if prev["group_a"] == group[0] and delta_group > prev["delta_group"] + 1e-12:
                raise StateError("group coverage radius increased between selections")
        self._group_counts[0] += 1 if revealed_a == 0 else 0
        self._group_counts[1] += 1 if revealed_a == 1 else 0
        self.entries.append({
            "iteration": iteration,
            "group_a": int(group[0]),
            "group_c": int(group[1]),
            "chosen_id": int(chosen_id),
            "revealed_a": int(revealed_a),
            "n_group": int(n_group),
            "delta_group": float(delta_group),
            "max_unannotated_loss": float(max_unannotated_loss),
        })


@dataclass
class RunResult:
    method: str
    seed: int
    records: list
    summary: dict
    trace: list = field(default_factory=list)
    coverage_log: list = field(default_factory=list)
    selections: list = field(default_factory=list)
    ledger: object = None
    dataset: object = None
    classifier: object = None
    checkpoints: list = field(default_factory=list)


# -- results file io ---------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def write_records(path, records, append=False):
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, default=_json_default) + "\n")


def read_records(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def aggregate(records, keys=("method", "dataset", "lambda"),
              fields=("accuracy", "eop", "delta_eo_abs", "delta_eo_signed")):
    """Group records and emit mean/std (population) per numeric field.

    Records missing a field value (null) are skipped for that field.
    """
    groups: dict[tuple, list] = {}
    for rec in records:
        key = tuple(rec.get(k) for k in keys)
        groups.setdefault(key, []).append(rec)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k)):
        row = dict(zip(keys, key))
        row["n_runs"] = len(groups[key])
        for f in fields:
            values = [r[f] for r in groups[key] if r.get(f) is not None]
            if values:
                arr = np.asarray(values, dtype=np.float64)
                row[f + "_mean"] = float(arr.mean())
                row[f + "_std"] = float(arr.std())
            else:
                row[f + "_mean"] = None
                row[f + "_std"] = None
        rows.append(row)
    return rows


# -- run plumbing ------------------------------------------------------------


def _rng_children(seed):
    names = ("data", "model", "pretrain", "seeding", "fa", "pod", "select", "method")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: child for name, child in zip(names, children)}


def _load_dataset(config, children):
    seed = int(children["data"].generate_state(1)[0])
    if config.dataset == "synthetic":
        return data.make_synthetic(seed, n_per_subgroup=config.synthetic_counts,
                                   spread=config.synthetic_spread)
    if config.data_path is None or config.schema_path is None:
        raise ConfigurationError(
            f"dataset {config.dataset!r} needs data_path and schema_path")
    return data.load_tabular(config.data_path, config.schema_path, split_seed=seed)


def _build_classifier(config, dataset, children):
    seed = int(children["model"].generate_state(1)[0])
    return FairClassifier.build(dataset.dim, embed_dim=config.embed_dim,
                                head_hidden=config.head_hidden,
                                task_layers=config.task_layers,
                                dropout=config.dropout, seed=seed)


def _eval_report(logits_fn, dataset, ids, purpose="evaluation"):
    preds = fairness.predict_binary(logits_fn(ids))
    a = dataset.oracle.view(ids, purpose)
    return fairness.report(preds, dataset.labels[ids], a)


def _base_record(config, seed, iteration, spent, rep):
    return {
        "record": "iteration",
        "method": config.method,
        "dataset": config.dataset,
        "lambda": config.lam,
        "seed": seed,
        "iteration": iteration,
        "spent": spent,
        "accuracy": rep.accuracy,
        "eop": rep.eop,
        "delta_eo_signed": rep.delta_eo_signed,
        "delta_eo_abs": rep.delta_eo_abs,
        "delta_tpr": rep.delta_tpr,
        "delta_fpr": rep.delta_fpr,
        "N_sel_group": None,
        "delta_cover_group": None,
    }


def _summary_record(config, seed, rep, dataset, spent, budget, selected_iteration,
                    runtime_s):
    rec = _base_record(config, seed, selected_iteration, spent, rep)
    rec["record"] = "summary"
    rec.update({
        "n": dataset.meta.get("n"),
        "n_train": int(dataset.train_ids().size),
        "budget": budget,
        "selected_iteration": selected_iteration,
        "fairness_metric": config.metric,
        "runtime_s": runtime_s,
    })
    return rec


def _active_budget(config, n_train):
    if config.budget is not None:
        return int(config.budget)
    return data.budget_from_ratio(config.budget_ratio, n_train)


def _coverage_snapshot(dataset, state, embeddings, a_diag):
    """delta over the whole train pool plus per ground-truth group; the group
    restriction needs hidden attributes, read through the diagnostics view."""
    train_ids = dataset.train_ids()
    ann = state.annotated
    delta_all, _ = selection.coverage(embeddings, ann, train_ids)
    stats = selection.CoverageStats(delta_all=delta_all)
    for a in (0, 1):
        pool = train_ids[a_diag == a]
        if pool.size:
            stats.delta_group[a], _ = selection.coverage(embeddings, ann, pool)
    stats.validate()
    return stats


def _check_coverage_monotone(prev, cur):
    if prev is None:
        return
    if cur.delta_all > prev.delta_all + 1e-12:
        raise StateError("coverage radius increased after an annotation")
    for a, d in cur.delta_group.items():
        if a in prev.delta_group and d > prev.delta_group[a] + 1e-12:
            raise StateError(f"group {a} coverage radius increased after an annotation")


def _ordered_candidate_groups(state, clf, dataset, embeddings):
    """Nonempty subgroups ordered by centralized accuracy (worst first),
    ties following the fixed subgroup order."""
    _, centralized, sizes = selection.centralized_accuracy_table(
        state, clf, dataset, embeddings)
    present = [( centralized[a][c], idx, (a, c))
               for idx, (a, c) in enumerate(selection.SUBGROUP_TIE_ORDER)
               if sizes[a][c] > 0]
    present.sort(key=lambda t: (t[0], t[1]))
    return [g for _, _, g in present]


def _select_instance(method, state, clf, dataset, embeddings, rng):
    """Dispatch to the method's selector; returns (chosen id, group or None)."""
    if method == "apod":
        for k, group in enumerate(_ordered_candidate_groups(state, clf, dataset, embeddings)):
            try:
                chosen = selection.individual_select(state, embeddings, group)
                if k > 0:
                    log.warning("empty-group fallback fired; using next-worst %s", group)
                return chosen, group
            except SelectionError:
                continue
        raise SelectionError("no unannotated candidates in any subgroup")
    if method == "pod_rs":
        return selection.select_random(state, rng), None
    if method == "pod_al":
        return selection.select_uncertainty(state, clf, embeddings), None
    if method == "pod_ca":
        return selection.select_coreset(state, embeddings), None
    if method == "pod_individual_only":
        return selection.individual_only(state, embeddings), None
    if method == "pod_group_only":
        chosen, group = selection.group_only(state, clf, dataset, embeddings, rng)
        return chosen, group
    raise ConfigurationError(f"method {method!r} has no per-iteration selector")


# -- the budgeted debias/annotate loop -----------------------------------------


def _run_budgeted_pod(config, seed, dataset, clf, embeddings, ledger, children):
    pod_cfg = PodConfig(lam=config.lam, epochs=config.pod_epochs,
                        batch_size=config.batch_size, lr=config.lr)
    rng_fa = np.random.default_rng(children["fa"])
    rng_pod = np.random.default_rng(children["pod"])
    rng_sel = np.random.default_rng(children["select"])

    state = selection.SelectionState(dataset.train_ids(), dataset.labels,
                                     annotated_ids=ledger.annotated_ids)
    mitigation.train_sensitive_head(clf, dataset, ledger, epochs=config.fa_epochs,
                                    rng=rng_fa, h_cache=embeddings)
    train_ids = dataset.train_ids()
    a_diag = dataset.oracle.view(train_ids, "diagnostics")
    test_ids = dataset.test_ids()
    task_logits = lambda ids: clf.task_logits(embeddings[ids])

    records, selections_made, checkpoints = [], [], []
    _, seed_a = ledger.annotations()
    trace = BoundTrace(initial_counts=((seed_a == 0).sum(), (seed_a == 1).sum()))
    coverage_log = []
    prev_cov = None
    iteration = 0
    while True:
        mitigation.pod_train(clf, dataset, ledger, pod_cfg, rng_pod, h_cache=embeddings)
        checkpoints.append([p.copy() for p in clf.task_head.params()])
        rep = _eval_report(task_logits, dataset, test_ids)
        rec = _base_record(config, seed, iteration, ledger.spent, rep)
        if ledger.spent >= ledger.budget or state.unannotated().size == 0:
            records.append(rec)
            break

        mitigation.train_sensitive_head(clf, dataset, ledger, epochs=config.fa_epochs,
                                        rng=rng_fa, h_cache=embeddings)
        selection.refresh_proxy(state, clf, embeddings)
        chosen, group = _select_instance(config.method, state, clf, dataset,
                                         embeddings, rng_sel)
        revealed_a = ledger.reveal(chosen)
        state.move(chosen)
        selections_made.append((chosen, group, revealed_a))

        cov = _coverage_snapshot(dataset, state, embeddings, a_diag)
        _check_coverage_monotone(prev_cov, cov)
        prev_cov = cov
        coverage_log.append(cov)

        if group is not None:
            _, ann_a = ledger.annotations()
            n_group = int((ann_a == group[0]).sum())
            ids_u = state.unannotated()
            rows, _ = nn.cross_entropy_rows(task_logits(ids_u), dataset.labels[ids_u]) \
                if ids_u.size else (np.zeros(1), None)
            trace.append(iteration, group, chosen, revealed_a, n_group,
                         cov.delta_group[group[0]], rows.max())
            rec["N_sel_group"] = n_group
            rec["delta_cover_group"] = cov.delta_group[group[0]]
        records.append(rec)
        iteration += 1

    best, _scores = mitigation.head_selection(checkpoints, clf, dataset,
                                              config.metric, h_cache=embeddings)
    clf.task_head.set_params(checkpoints[best])
    return records, trace, coverage_log, selections_made, checkpoints, best


# -- per-method runners ----------------------------------------------------------


def run_method(config, seed):
    """Run one (method, seed) experiment and return its RunResult.

    The RNG streams for dataset, model init and pretraining derive only from
    `seed`, so different methods on the same seed share the dataset and the
    pretrained model (paired comparisons).
    """
    config = config.resolved()
    t0 = time.monotonic()
    children = _rng_children(seed)
    dataset = _load_dataset(config, children)
    clf = _build_classifier(config, dataset, children)
    rng_pre = np.random.default_rng(children["pretrain"])
    test_ids = dataset.test_ids()
    n_train = int(dataset.train_ids().size)

    trace_entries, coverage_log, selections_made, checkpoints = [], [], [], []
    ledger = None
    best_iteration = 0

    if config.method == "vanilla":
        mitigation.pretrain(clf, dataset, epochs=config.pretrain_epochs,
                            batch_size=config.batch_size, lr=config.lr,
                            rng=rng_pre, freeze=False)
        rep = _eval_report(lambda ids: clf.task_head.forward_eval(
            clf.body.forward_eval(dataset.features[ids])), dataset, test_ids)
        records = [_base_record(config, seed, 0, 0, rep)]
    elif config.method == "group_dro":
        dro = baselines.DroState(eta_q=config.eta_q)
        baselines.train_group_dro(clf, dataset, dro, epochs=config.pretrain_epochs,
                                  batch_size=config.batch_size, lr=config.lr,
                                  rng=rng_pre)
        rep = _eval_report(lambda ids: clf.task_head.forward_eval(
            clf.body.forward_eval(dataset.features[ids])), dataset, test_ids)
        records = [_base_record(config, seed, 0, 0, rep)]
    elif config.method == "lff":
        state = baselines.LffState.build(
            dataset.dim, embed_dim=config.embed_dim, head_hidden=config.head_hidden,
            task_layers=config.task_layers, dropout=config.dropout,
            q_gce=config.q_gce, seed=int(children["model"].generate_state(1)[0]))
        debiased = baselines.train_lff(dataset, state, epochs=config.pretrain_epochs,
                                       batch_size=config.batch_size, lr=config.lr,
                                       rng=rng_pre)
        rep = _eval_report(lambda ids: debiased.forward_eval(dataset.features[ids]),
                           dataset, test_ids)
        records = [_base_record(config, seed, 0, 0, rep)]
    else:
        active = _active_budget(config, n_train)
        mitigation.pretrain(clf, dataset, epochs=config.pretrain_epochs,
                            batch_size=config.batch_size, lr=config.lr, rng=rng_pre)
        embeddings = clf.embed(dataset.features)
        # seed set first; the ledger then caps active annotations exactly
        ledger = data.AnnotationLedger(4 * config.seed_per_subgroup + active,
                                       dataset.oracle)
        rng_seedann = np.random.default_rng(children["seeding"])
        data.seed_annotations(dataset, ledger, rng_seedann,
                              per_subgroup=config.seed_per_subgroup)
        ledger.budget = ledger.spent + active
        task_logits = lambda ids: clf.task_logits(embeddings[ids])

        if config.method == "fal":
            baselines.train_fal(clf, dataset, ledger, config.alpha,
                                rng=np.random.default_rng(children["method"]),
                                batch_size=config.batch_size, lr=config.lr,
                                h_cache=embeddings)
            rep = _eval_report(task_logits, dataset, test_ids)
            records = [_base_record(config, seed, 0, ledger.spent, rep)]
        elif config.method == "ssbm":
            pod_cfg = PodConfig(lam=config.lam, epochs=config.pod_epochs,
                                batch_size=config.batch_size, lr=config.lr)
            baselines.train_ssbm(clf, dataset, active,
                                 np.random.default_rng(children["method"]),
                                 pod_config=pod_cfg, ledger=ledger)
            rep = _eval_report(task_logits, dataset, test_ids)
            records = [_base_record(config, seed, 0, ledger.spent, rep)]
        else:
            (records, trace, coverage_log, selections_made, checkpoints,
             best_iteration) = _run_budgeted_pod(config, seed, dataset, clf,
                                                 embeddings, ledger, children)
            trace_entries = trace.entries
            rep = _eval_report(task_logits, dataset, test_ids)

    runtime = time.monotonic() - t0
    summary = _summary_record(config, seed, rep, dataset,
                              ledger.spent if ledger else 0,
                              ledger.budget if ledger else 0,
                              best_iteration, runtime)
    result = RunResult(method=config.method, seed=seed, records=records,
                       summary=summary, trace=trace_entries,
                       coverage_log=coverage_log, selections=selections_made,
                       ledger=ledger, dataset=dataset, classifier=clf,
                       checkpoints=checkpoints)
    outdir = config.outdir_resolved()
    if outdir:
        _write_artifacts(config, seed, result)
    return result


def run_many(config):
    """Run every configured seed sequentially; returns the RunResults."""
    config = config.resolved()
    return [run_method(config, seed) for seed in config.seeds]


def sweep(config, lambdas):
    """Run (lambda, seed) grid; returns (aggregated rows, all summaries).

    A failing run is recorded with its error and the sweep continues.
    """
    config = config.resolved()
    summaries = []
    failures = []
    for lam in lambdas:
        cfg = replace(config, lam=float(lam))
        for seed in cfg.seeds:
            try:
                summaries.append(run_method(cfg, seed).summary)
            except Exception as exc:  # noqa: BLE001 - sweep isolation
                log.error("run failed (lambda=%s seed=%s): %s", lam, seed, exc)
                failures.append({"record": "failure", "method": cfg.method,
                                 "dataset": cfg.dataset, "lambda": float(lam),
                                 "seed": seed, "error": str(exc)})
    rows = aggregate(summaries)
    outdir = config.outdir_resolved()
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        write_records(os.path.join(outdir, "sweep_results.jsonl"),
                      summaries + failures)
    return rows, summaries


# -- artifact writing --------------------------------------------------------------


def _run_dir(config, seed):
    outdir = config.outdir_resolved()
    path = os.path.join(outdir, f"{config.dataset}_{config.method}"
                                f"_lam{config.lam:g}_seed{seed}")
    os.makedirs(path, exist_ok=True)
    return path


def _write_artifacts(config, seed, result):
    rundir = _run_dir(config, seed)
    write_records(os.path.join(rundir, "results.jsonl"),
                  result.records + [result.summary])
    if result.trace:
        write_records(os.path.join(rundir, "trace.jsonl"), result.trace)
    if result.ledger is not None:
        with open(os.path.join(rundir, "ledger.txt"), "w", encoding="ascii") as fh:
            fh.write("# id a\n")
            for i in result.ledger.annotated_ids:
                fh.write(f"{i} {result.ledger.values[i]}\n")
    if result.classifier is not None and result.classifier.frozen_body:
        _write_embedding_dump(os.path.join(rundir, "embeddings.txt"),
                              result.dataset, result.classifier)
    if config.save_checkpoints:
        for k, params in enumerate(result.checkpoints):
            saved = [p.copy() for p in result.classifier.task_head.params()]
            result.classifier.task_head.set_params(params)
            nn.save_checkpoint(result.classifier.task_head,
                               os.path.join(rundir, f"head_{k:04d}.txt"))
            result.classifier.task_head.set_params(saved)


def _write_embedding_dump(path, dataset, clf):
    """Train-pool embeddings with labels and groups, one instance per line.

    The group column is reporting output (same standing as test-split
    evaluation) and reads through the diagnostics purpose.
    """
    ids = dataset.train_ids()
    h = clf.embed(dataset.features[ids])
    a = dataset.oracle.view(ids, "diagnostics")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("# id y a " + " ".join(f"h{j}" for j in range(h.shape[1])) + "\n")
        for i, row_a, row in zip(ids, a, h):
            values = " ".join("%.17g" % v for v in row)
            fh.write(f"{int(i)} {int(dataset.labels[i])} {int(row_a)} {values}\n")
