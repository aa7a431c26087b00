"""Figures from experiment results files.

Inputs are the harness's documented text artifacts:

* results file: line-delimited JSON records; ``record`` is "iteration" or
  "summary"; every record carries method, dataset, lambda, seed, iteration,
  spent and the metric fields; summaries add ``n_train``.
* embedding dump: ``# id y a h0 ... h{M-1}`` header, one instance per line.
* ledger file: ``# id a`` header, one annotated instance per line in
  annotation order.

All plotting is read-only and deterministic: figures carry no timestamps,
so identical inputs produce identical image bytes.
"""
from __future__ import annotations

import json

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

SUBGROUP_STYLE = {
    (0, 1): ("tab:blue", "unprivileged positive"),
    (0, 0): ("tab:cyan", "unprivileged negative"),
    (1, 1): ("tab:red", "privileged positive"),
    (1, 0): ("tab:orange", "privileged negative"),
}

_SAVEFIG_KW = dict(dpi=120, metadata={"Software": None})


def load_results(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def mean_std(values):
    """Population mean/std; the independent recomputation target."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _require_metric(records, metric):
    for rec in records:
        if metric not in rec:
            raise ValueError(f"records are missing the metric column {metric!r}")


def tradeoff_series(records, dataset, metric):
    """Per method: one (lambda, metric mean/std, accuracy mean/std) point per
    regularizer weight, averaged over seeds. Uses summary records only."""
    summaries = [r for r in records
                 if r.get("record") == "summary" and r.get("dataset") == dataset]
    if not summaries:
        raise ValueError(f"no summary records for dataset {dataset!r}")
    _require_metric(summaries, metric)
    groups: dict = {}
    for rec in summaries:
        groups.setdefault((rec["method"], rec["lambda"]), []).append(rec)
    series: dict = {}
    for (method, lam) in sorted(groups, key=lambda k: (k[0], k[1])):
        recs = groups[(method, lam)]
        fair = [r[metric] for r in recs if r[metric] is not None]
        acc = [r["accuracy"] for r in recs if r["accuracy"] is not None]
        if not fair or not acc:
            continue
        fm, fs = mean_std(fair)
        am, astd = mean_std(acc)
        series.setdefault(method, []).append((lam, fm, fs, am, astd))
    return series


def plot_tradeoff(results_path, dataset, metric, out_path):
    """Accuracy against the fairness metric, one series per method."""
    series = tradeoff_series(load_results(results_path), dataset, metric)
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for method, points in series.items():
        points = sorted(points)
        ax.errorbar([p[1] for p in points], [p[3] for p in points],
                    xerr=[p[2] for p in points], yerr=[p[4] for p in points],
                    marker="o", capsize=2.5, label=method)
    ax.set_xlabel(metric)
    ax.set_ylabel("accuracy")
    ax.set_title(f"{dataset}: accuracy vs {metric}")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVEFIG_KW)
    plt.close(fig)
    return out_path


def ratio_series(records, metric="delta_eo_abs", methods=None):
    """Per method: metric mean/std per iteration against the annotation
    ratio (spent over the run's train-pool size, taken from its summary)."""
    _require_metric([r for r in records if r.get("record") == "iteration"], metric)
    n_train = {}
    for rec in records:
        if rec.get("record") == "summary" and rec.get("n_train"):
            n_train[(rec["method"], rec["lambda"], rec["seed"])] = rec["n_train"]
    iters = [r for r in records if r.get("record") == "iteration"]
    if methods is not None:
        iters = [r for r in iters if r["method"] in methods]
        if not iters:
            raise ValueError(f"no iteration records for methods {methods!r}")
    groups: dict = {}
    for rec in iters:
        key = (rec["method"], rec["lambda"], rec["seed"])
        if key not in n_train or rec.get(metric) is None:
            continue
        groups.setdefault((rec["method"], rec["iteration"]), []).append(
            (rec["spent"] / n_train[key], rec[metric]))
    series: dict = {}
    for (method, iteration) in sorted(groups):
        pairs = groups[(method, iteration)]
        ratio = float(np.mean([p[0] for p in pairs]))
        m, s = mean_std([p[1] for p in pairs])
        series.setdefault(method, []).append((ratio, m, s))
    if not series:
        raise ValueError("no iteration records joinable to a summary n_train")
    return series


def plot_ratio(results_path, out_path, metric="delta_eo_abs", methods=None):
    """Metric vs annotation ratio with one standard-deviation bands."""
    series = ratio_series(load_results(results_path), metric, methods)
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    for method, points in series.items():
        points = sorted(points)
        x = np.array([p[0] for p in points])
        y = np.array([p[1] for p in points])
        s = np.array([p[2] for p in points])
        ax.plot(x, y, marker="o", label=method)
        ax.fill_between(x, y - s, y + s, alpha=0.25)
    ax.set_xlabel("annotation ratio")
    ax.set_ylabel(metric)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVEFIG_KW)
    plt.close(fig)
    return out_path


# -- embeddings ----------------------------------------------------------------


def load_embedding_dump(path):
    ids, ys, groups, rows = [], [], [], []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        if not header.startswith("# id y a"):
            raise ValueError(f"{path}: not an embedding dump (bad header)")
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(int(parts[0]))
            ys.append(int(parts[1]))
            groups.append(int(parts[2]))
            rows.append([float(v) for v in parts[3:]])
    return (np.asarray(ids), np.asarray(ys, dtype=np.int8),
            np.asarray(groups, dtype=np.int8), np.asarray(rows))


def load_ledger(path):
    ids = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            ids.append(int(line.split()[0]))
    return ids


def pca_2d(x):
    """First two principal components with a fixed sign convention (the
    largest-magnitude loading of each component is positive).

    Returns (projection, components); components has shape (2, dim)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ValueError("need at least two feature dimensions for a 2-D view")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:2].copy()
    for k in range(2):
        lead = np.argmax(np.abs(components[k]))
        if components[k, lead] < 0:
            components[k] = -components[k]
    return centered @ components.T, components


def plot_embeddings(dump_path, ledger_path, out_path):
    """2-D principal-component scatter of the train pool, colored by
    (group, label) subgroup, with annotated instances ringed."""
    ids, ys, groups, emb = load_embedding_dump(dump_path)
    annotated = set(load_ledger(ledger_path))
    proj, _ = pca_2d(emb)
    fig, ax = plt.subplots(figsize=(5.2, 4.6))
    for (a, y), (color, label) in SUBGROUP_STYLE.items():
        mask = (groups == a) & (ys == y)
        if mask.any():
            ax.scatter(proj[mask, 0], proj[mask, 1], s=14, c=color,
                       label=label, alpha=0.65, linewidths=0)
    ann_mask = np.asarray([i in annotated for i in ids])
    if ann_mask.any():
        ax.scatter(proj[ann_mask, 0], proj[ann_mask, 1], s=80,
                   facecolors="none", edgecolors="black", linewidths=1.2,
                   label="annotated")
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, **_SAVEFIG_KW)
    plt.close(fig)
    return out_path
