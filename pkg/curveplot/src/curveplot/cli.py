"""CLI: render trade-off, annotation-ratio, and embedding figures."""
from __future__ import annotations

import argparse
import sys

from . import plots


def build_parser():
    parser = argparse.ArgumentParser(
        prog="curveplot",
        description="Figures from fairness-annotation experiment artifacts")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tradeoff", help="accuracy vs fairness, one point per weight")
    p.add_argument("--results", required=True, help="results jsonl file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--metric", default="delta_eo_abs",
                   help="fairness column, e.g. delta_eo_abs or eop")
    p.add_argument("--out", required=True, help="output image path")
    p.set_defaults(func=lambda a: plots.plot_tradeoff(a.results, a.dataset,
                                                      a.metric, a.out))

    p = sub.add_parser("ratio", help="fairness vs annotation ratio with std bands")
    p.add_argument("--results", required=True)
    p.add_argument("--metric", default="delta_eo_abs")
    p.add_argument("--methods", help="comma-separated method filter")
    p.add_argument("--out", required=True)
    p.set_defaults(func=lambda a: plots.plot_ratio(
        a.results, a.out, a.metric,
        a.methods.split(",") if a.methods else None))

    p = sub.add_parser("embeddings", help="2-D principal-component scatter")
    p.add_argument("--dump", required=True, help="embedding dump file")
    p.add_argument("--ledger", required=True, help="annotation ledger file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=lambda a: plots.plot_embeddings(a.dump, a.ledger, a.out))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.func(args)
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
