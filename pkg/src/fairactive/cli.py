"""Command-line interface: ``run``, ``sweep`` and ``report`` subcommands.

Every ExperimentConfig field is reachable as a flag; a plain-text config
file (``key = value`` lines) can preload values, with explicit flags taking
precedence. The output directory can also be forced through the
FAIRACTIVE_OUTDIR environment variable.
"""
from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import data, orchestrator
from .orchestrator import ExperimentConfig, METHODS

log = logging.getLogger(__name__)

_INT_KEYS = ("budget", "pretrain_epochs", "pod_epochs", "fa_epochs", "batch_size",
             "seed_per_subgroup", "embed_dim", "head_hidden", "task_layers")
_FLOAT_KEYS = ("lam", "budget_ratio", "lr", "dropout", "alpha", "eta_q", "q_gce",
               "synthetic_spread")
_STR_KEYS = ("dataset", "method", "schema_path", "data_path", "metric", "outdir")


def _parse_seeds(text):
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _parse_counts(text):
    counts = tuple(int(t) for t in str(text).replace(",", " ").split())
    if len(counts) != 4:
        raise ValueError("expected 4 subgroup counts")
    return counts


def _config_from_sources(args):
    values = {}
    if args.config:
        for key, value in data.parse_kv_file(args.config):
            key = "lam" if key == "lambda" else key
            if key == "seeds":
                values[key] = _parse_seeds(value)
            elif key == "synthetic_counts":
                values[key] = _parse_counts(value)
            elif key == "save_checkpoints":
                values[key] = value.lower() in ("1", "true", "yes")
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _STR_KEYS:
                values[key] = value
            else:
                raise SystemExit(f"unknown config key {key!r}")
    for key in _INT_KEYS + _FLOAT_KEYS + _STR_KEYS + ("seeds", "synthetic_counts"):
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if args.no_checkpoints:
        values["save_checkpoints"] = False
    if "dataset" not in values or "method" not in values:
        raise SystemExit("dataset and method are required (flag or config file)")
    return ExperimentConfig(**values)


def _add_config_flags(p):
    p.add_argument("--config", help="plain-text key = value config file")
    p.add_argument("--dataset", help="synthetic | adult | meps | loan_default | german")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--lambda", dest="lam", type=float, help="regularizer weight")
    p.add_argument("--budget", type=int, help="active annotations beyond the seed set")
    p.add_argument("--budget-ratio", dest="budget_ratio", type=float,
                   help="active budget as a ratio of the train split")
    p.add_argument("--seeds", type=_parse_seeds, help="comma-separated seed list")
    p.add_argument("--schema-path", dest="schema_path")
    p.add_argument("--data-path", dest="data_path")
    p.add_argument("--pretrain-epochs", dest="pretrain_epochs", type=int)
    p.add_argument("--pod-epochs", dest="pod_epochs", type=int)
    p.add_argument("--fa-epochs", dest="fa_epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed-per-subgroup", dest="seed_per_subgroup", type=int)
    p.add_argument("--embed-dim", dest="embed_dim", type=int)
    p.add_argument("--head-hidden", dest="head_hidden", type=int)
    p.add_argument("--task-layers", dest="task_layers", type=int)
    p.add_argument("--metric", choices=("eop", "delta_eo"))
    p.add_argument("--alpha", type=float, help="fal accuracy/fairness trade-off")
    p.add_argument("--eta-q", dest="eta_q", type=float, help="group_dro weight step")
    p.add_argument("--q-gce", dest="q_gce", type=float, help="lff loss exponent")
    p.add_argument("--outdir")
    p.add_argument("--no-checkpoints", action="store_true")
    p.add_argument("--synthetic-counts", dest="synthetic_counts", type=_parse_counts)
    p.add_argument("--synthetic-spread", dest="synthetic_spread", type=float)


def _fmt(value):
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _print_table(rows, columns):
    widths = [max(len(c), max((len(_fmt(r.get(c))) for r in rows), default=0))
              for c in columns]
    header = "  ".join(c.ljust(w) for c, w in zip(columns, widths))
    print(header)
    print("-" * len(header))
    for r in rows:
        print("  ".join(_fmt(r.get(c)).ljust(w) for c, w in zip(columns, widths)))


def cmd_run(args):
    config = _config_from_sources(args)
    if args.interactive:
        _attach_prompt_oracle_notice()
    results = orchestrator.run_many(config)
    for res in results:
        s = res.summary
        print(f"[{s['method']} seed={s['seed']}] spent={s['spent']} "
              f"accuracy={_fmt(s['accuracy'])} eop={_fmt(s['eop'])} "
              f"delta_eo_abs={_fmt(s['delta_eo_abs'])}")
    return 0


def cmd_sweep(args):
    config = _config_from_sources(args)
    lambdas = [float(t) for t in str(args.lambdas).replace(",", " ").split()]
    rows, _ = orchestrator.sweep(config, lambdas)
    _print_table(rows, ("method", "lambda", "n_runs", "accuracy_mean", "accuracy_std",
                        "delta_eo_abs_mean", "delta_eo_abs_std", "eop_mean", "eop_std"))
    return 0


def cmd_report(args):
    records = orchestrator.read_records(args.results)
    records = [r for r in records if r.get("record") == "summary"]
    if args.method:
        records = [r for r in records if r.get("method") == args.method]
    if args.dataset:
        records = [r for r in records if r.get("dataset") == args.dataset]
    if not records:
        raise SystemExit("no summary records matched")
    rows = orchestrator.aggregate(records)
    _print_table(rows, ("method", "dataset", "lambda", "n_runs", "accuracy_mean",
                        "accuracy_std", "delta_eo_abs_mean", "delta_eo_abs_std",
                        "eop_mean", "eop_std"))
    return 0


def _attach_prompt_oracle_notice():
    # Demonstration-only prompt mode: reveals route through stdin. Untested
    # surface, kept out of experiment paths on purpose.
    original = data.SensitiveOracle._reveal

    def prompt_reveal(self, instance_id):
        answer = input(f"group for instance {instance_id} (0/1)? ").strip()
        value = int(answer)
        if value not in (0, 1):
            raise ValueError("expected 0 or 1")
        self._values[instance_id] = value
        return original(self, instance_id)

    data.SensitiveOracle._reveal = prompt_reveal


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fairactive",
        description="Fairness-regularized training with actively selected "
                    "sensitive-attribute annotations")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one method over the configured seeds")
    _add_config_flags(p_run)
    p_run.add_argument("--interactive", action="store_true",
                       help="prompt a human for each annotation (demo mode)")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep the regularizer weight")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--lambdas", required=True,
                         help="comma-separated weights, e.g. 0.25,0.5,1,2")
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="aggregate a results file")
    p_rep.add_argument("--results", required=True)
    p_rep.add_argument("--method")
    p_rep.add_argument("--dataset")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="raise", under="ignore")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
