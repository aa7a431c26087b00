import json
import os

import numpy as np
import pytest

from fairactive import cli, nn, orchestrator
from fairactive.errors import ConfigurationError, StateError
from fairactive.orchestrator import (BoundTrace, ExperimentConfig, aggregate,
                                     read_records, run_method, sweep,
                                     write_records)

FAST = dict(dataset="synthetic", synthetic_counts=(16, 150, 120, 120),
            pretrain_epochs=8, pod_epochs=3, fa_epochs=5, batch_size=64,
            save_checkpoints=False)


def fast_config(method, **kw):
    return ExperimentConfig(method=method, **{**FAST, **kw})


# -- config ------------------------------------------------------------------


def test_config_resolves_dataset_defaults():
    cfg = ExperimentConfig(dataset="adult", method="apod").resolved()
    assert cfg.embed_dim == 64 and cfg.task_layers == 2
    assert cfg.metric == "delta_eo" and cfg.budget_ratio == 0.004
    cfg = ExperimentConfig(dataset="meps", method="apod").resolved()
    assert cfg.embed_dim == 32 and cfg.task_layers == 3 and cfg.metric == "eop"


def test_config_validation_errors():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(dataset="synthetic", method="magic").resolved()
    with pytest.raises(ConfigurationError):
        ExperimentConfig(dataset="synthetic", method="apod",
                         budget_ratio=1.5).resolved()
    with pytest.raises(ConfigurationError):
        ExperimentConfig(dataset="synthetic", method="fal", alpha=2.0).resolved()
    with pytest.raises(ConfigurationError):
        ExperimentConfig(dataset="mystery", method="apod").resolved()


def test_outdir_env_override(monkeypatch, tmp_path):
    monkeypatch.setenv(orchestrator.OUTDIR_ENV, str(tmp_path))
    cfg = ExperimentConfig(dataset="synthetic", method="vanilla", outdir="elsewhere")
    assert cfg.outdir_resolved() == str(tmp_path)


# -- the budgeted loop -----------------------------------------------------------


def test_unit_budget_one_selection_two_debias_phases():
    res = run_method(fast_config("apod", budget=1), seed=0)
    assert len(res.selections) == 1
    assert len(res.checkpoints) == 2
    assert len(res.records) == 2
    assert res.ledger.spent == res.ledger.budget == 8 + 1


def test_ledger_conservation_and_record_schema():
    res = run_method(fast_config("apod", budget=4), seed=1)
    ds = res.dataset
    n_train = ds.train_ids().size
    seen = {int(i) for i in res.ledger.annotated_ids}
    assert len(seen) == res.ledger.spent == 8 + 4
    assert seen <= set(ds.train_ids().tolist())
    required = {"record", "method", "dataset", "lambda", "seed", "iteration",
                "spent", "accuracy", "eop", "delta_eo_signed", "delta_eo_abs",
                "delta_tpr", "delta_fpr", "N_sel_group", "delta_cover_group"}
    for rec in res.records + [res.summary]:
        assert required <= set(rec)
    assert res.summary["record"] == "summary"
    assert res.summary["n_train"] == int(n_train)


def test_checkpoint_count_matches_iterations():
    res = run_method(fast_config("apod", budget=3), seed=2)
    assert len(res.checkpoints) == len(res.records) == 4
    assert 0 <= res.summary["selected_iteration"] < 4


def test_trace_entries_and_coverage_monotone():
    res = run_method(fast_config("apod", budget=5), seed=3)
    assert len(res.trace) == 5
    deltas_all = [c.delta_all for c in res.coverage_log]
    assert all(b <= a + 1e-12 for a, b in zip(deltas_all, deltas_all[1:]))
    for group in (0, 1):
        seq = [c.delta_group[group] for c in res.coverage_log if group in c.delta_group]
        assert all(b <= a + 1e-12 for a, b in zip(seq, seq[1:]))
    for entry in res.trace:
        assert entry["group_a"] in (0, 1) and entry["group_c"] in (0, 1)
        assert entry["max_unannotated_loss"] >= 0.0


def test_bound_trace_rejects_bad_sequences():
    trace = BoundTrace(initial_counts=(2, 2))
    trace.append(0, (0, 1), 10, 0, 3, 1.5, 0.2)
    with pytest.raises(StateError):  # count must step to 4, not 6
        trace.append(1, (0, 1), 11, 0, 6, 1.4, 0.2)
    trace2 = BoundTrace(initial_counts=(2, 2))
    trace2.append(0, (0, 1), 10, 0, 3, 1.5, 0.2)
    with pytest.raises(StateError):  # radius grew for an unchanged group
        trace2.append(1, (0, 1), 11, 0, 4, 2.0, 0.2)


def test_oracle_containment_purposes():
    res = run_method(fast_config("apod", budget=3), seed=4)
    purposes = set(res.dataset.oracle.reads_by_purpose())
    assert purposes <= {"annotation", "seeding", "evaluation", "diagnostics"}
    assert res.dataset.oracle.reads_by_purpose()["annotation"] == res.ledger.spent


# -- dispatch ------------------------------------------------------------------


def test_vanilla_dispatch_equals_direct_training():
    from fairactive import baselines, mitigation

    res = run_method(fast_config("vanilla"), seed=5)
    cfg = fast_config("vanilla").resolved()
    children = orchestrator._rng_children(5)
    ds = orchestrator._load_dataset(cfg, children)
    clf = orchestrator._build_classifier(cfg, ds, children)
    baselines.train_vanilla(clf, ds, epochs=cfg.pretrain_epochs,
                            batch_size=cfg.batch_size, lr=cfg.lr,
                            rng=np.random.default_rng(children["pretrain"]))
    assert nn.params_digest(res.classifier.task_head) == nn.params_digest(clf.task_head)


def test_individual_only_alias_matches_coreset_trajectory():
    a = run_method(fast_config("pod_individual_only", budget=4), seed=6)
    b = run_method(fast_config("pod_ca", budget=4), seed=6)
    assert [s[0] for s in a.selections] == [s[0] for s in b.selections]
    assert nn.params_digest(a.classifier.task_head) == \
        nn.params_digest(b.classifier.task_head)
    for ra, rb in zip(a.records, b.records):
        assert ra["accuracy"] == rb["accuracy"]
        assert ra["delta_eo_abs"] == rb["delta_eo_abs"]


def test_budgeted_methods_report_identical_spent():
    spents = {}
    for method in ("apod", "pod_rs", "pod_al", "pod_ca", "pod_group_only",
                   "pod_individual_only", "ssbm", "fal"):
        res = run_method(fast_config(method, budget=2), seed=7)
        spents[method] = res.summary["spent"]
    assert len(set(spents.values())) == 1, spents


def test_every_method_produces_a_summary():
    for method in orchestrator.METHODS:
        res = run_method(fast_config(method, budget=2), seed=8)
        assert res.summary["record"] == "summary"
        assert res.summary["accuracy"] is not None


# -- sweep and results io -----------------------------------------------------------


def test_sweep_single_point():
    cfg = fast_config("pod_rs", budget=2, seeds=(0,))
    rows, summaries = sweep(cfg, [1.0])
    assert len(rows) == 1 and len(summaries) == 1
    assert rows[0]["lambda"] == 1.0 and rows[0]["n_runs"] == 1


def test_sweep_multi_seed_std_and_file_reaggregation(tmp_path):
    cfg = fast_config("ssbm", budget=2, seeds=(0, 1, 2), outdir=str(tmp_path))
    rows, summaries = sweep(cfg, [0.5, 1.0])
    assert len(rows) == 2
    for row in rows:
        assert row["n_runs"] == 3
        assert row["accuracy_std"] is not None
    path = tmp_path / "sweep_results.jsonl"
    assert path.exists()
    reloaded = aggregate([r for r in read_records(path) if r["record"] == "summary"])
    assert reloaded == rows


def test_write_read_records_roundtrip(tmp_path):
    records = [{"record": "iteration", "x": np.float64(1.5), "y": None,
                "n": np.int64(3)},
               {"record": "summary", "x": 0.25, "y": 2.0, "n": 7}]
    path = tmp_path / "r.jsonl"
    write_records(path, records)
    back = read_records(path)
    assert back == [{"record": "iteration", "x": 1.5, "y": None, "n": 3},
                    {"record": "summary", "x": 0.25, "y": 2.0, "n": 7}]


def test_artifacts_written(tmp_path):
    cfg = fast_config("apod", budget=2, outdir=str(tmp_path),
                      save_checkpoints=True)
    res = run_method(cfg, seed=9)
    rundir = tmp_path / "synthetic_apod_lam1_seed9"
    assert (rundir / "results.jsonl").exists()
    assert (rundir / "trace.jsonl").exists()
    assert (rundir / "ledger.txt").exists()
    assert (rundir / "embeddings.txt").exists()
    assert (rundir / "head_0000.txt").exists()
    assert (rundir / "head_0002.txt").exists()

    back = read_records(rundir / "results.jsonl")
    assert back[-1]["record"] == "summary"
    assert len(back) == len(res.records) + 1

    ledger_lines = (rundir / "ledger.txt").read_text().strip().split("\n")
    assert ledger_lines[0] == "# id a"
    assert len(ledger_lines) - 1 == res.ledger.spent

    header = (rundir / "embeddings.txt").read_text().split("\n", 1)[0]
    assert header.startswith("# id y a h0")

    loaded = nn.load_checkpoint(rundir / "head_0000.txt")
    assert loaded.dims == res.classifier.task_head.dims


# -- cli ---------------------------------------------------------------------------


def test_cli_run_and_report(tmp_path, capsys):
    out = tmp_path / "runs"
    rc = cli.main(["run", "--dataset", "synthetic", "--method", "vanilla",
                   "--seeds", "0", "--synthetic-counts", "16,150,120,120",
                   "--pretrain-epochs", "4", "--batch-size", "64",
                   "--no-checkpoints", "--outdir", str(out)])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "vanilla" in printed and "accuracy=" in printed
    results = out / "synthetic_vanilla_lam1_seed0" / "results.jsonl"
    assert results.exists()
    rc = cli.main(["report", "--results", str(results)])
    assert rc == 0
    table = capsys.readouterr().out
    assert "vanilla" in table and "accuracy_mean" in table


def test_cli_config_file_and_flag_precedence(tmp_path, capsys):
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text(
        "dataset = synthetic\n"
        "method = vanilla\n"
        "lambda = 0.5\n"
        "seeds = 0\n"
        "synthetic_counts = 16,150,120,120\n"
        "pretrain_epochs = 3\n"
        "batch_size = 64\n"
        "save_checkpoints = false\n")
    rc = cli.main(["run", "--config", str(cfg_file), "--outdir", str(tmp_path / "o")])
    assert rc == 0
    capsys.readouterr()
    args = cli.build_parser().parse_args(
        ["run", "--config", str(cfg_file), "--lambda", "2.0"])
    cfg = cli._config_from_sources(args)
    assert cfg.lam == 2.0  # flag beats file
    assert cfg.pretrain_epochs == 3


def test_cli_unknown_config_key_rejected(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("dataset = synthetic\nmethod = vanilla\nwhat = 1\n")
    args = cli.build_parser().parse_args(["run", "--config", str(cfg_file)])
    with pytest.raises(SystemExit):
        cli._config_from_sources(args)
