"""Command-line front end: run, sweep, aggregate, bound."""

from __future__ import annotations

import argparse
import sys

from .aggregation import AGGREGATION_METHODS, ESTIMATORS, WEIGHTINGS, AggregatorSpec
from .config import load_config
from .simulation import (
    aggregate_file,
    bound_experiment,
    metrics_csv_lines,
    run_experiment,
    sweep,
    write_bound_csv,
    BOUND_HEADER,
    SWEEP_HEADER,
    write_sweep_csv,
)


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    rows = run_experiment(cfg, out_path=args.out, repeat=args.repeat)
    if args.out is None and cfg.output is None:
        for line in metrics_csv_lines(rows):
            print(line)
    else:
        last = rows[-1]
        print(f"{len(rows)} rounds, final accuracy {last.accuracy!r}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    tagged = sweep(
        cfg,
        lambdas=args.lam,
        deltas=args.delta,
        attacker_counts=args.attackers,
        out_path=args.out,
    )
    if args.out is None:
        print(SWEEP_HEADER)
        for lam, delta, row in tagged:
            print(f"{lam!r},{delta!r},{row.csv()}")
    else:
        print(f"{len(tagged)} rows")
    return 0


def _cmd_aggregate(args: argparse.Namespace) -> int:
    kwargs = {"method": args.method}
    for name, value in (
        ("lam", args.lam),
        ("delta", args.delta),
        ("gamma", args.gamma),
        ("estimator", args.estimator),
        ("weighting", args.weighting),
        ("trim_fraction", args.trim),
    ):
        if value is not None:
            kwargs[name] = value
    spec = AggregatorSpec(**kwargs)
    _, report = aggregate_file(args.in_path, spec, args.out)
    if report is not None:
        for k, weight in enumerate(report.normalized_weights):
            print(f"model {k} weight {float(weight)!r}")
    return 0


def _cmd_bound(args: argparse.Namespace) -> int:
    rows = bound_experiment(
        args.s_values,
        args.k_values,
        alpha=args.alpha,
        trials=args.trials,
        seed=args.seed,
        adv_magnitude=args.magnitude,
        lam=args.lam,
        delta=args.delta,
    )
    if args.out is not None:
        write_bound_csv(args.out, rows)
        print(f"{len(rows)} rows")
    else:
        print(BOUND_HEADER)
        for row in rows:
            print(row.csv())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resfed", description="Robust federated aggregation experiments."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--repeat", type=int, default=1, help="seeded repetitions")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="CSV output path")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="grid over clip level, cut threshold, attackers")
    p_sweep.add_argument("config", help="path to a JSON experiment config")
    p_sweep.add_argument("--lambda", dest="lam", type=float, nargs="+", default=None)
    p_sweep.add_argument("--delta", type=float, nargs="+", default=None)
    p_sweep.add_argument("--attackers", type=int, nargs="+", default=None)
    p_sweep.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sweep.add_argument("--out", default=None, help="CSV output path")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_agg = sub.add_parser("aggregate", help="aggregate a stored update matrix")
    p_agg.add_argument("--in", dest="in_path", required=True, help="input update file")
    p_agg.add_argument("--out", required=True, help="output update file (one row)")
    p_agg.add_argument("--method", default="residual_reweight", choices=AGGREGATION_METHODS)
    p_agg.add_argument("--lambda", dest="lam", type=float, default=None)
    p_agg.add_argument("--delta", type=float, default=None)
    p_agg.add_argument("--gamma", type=float, default=None)
    p_agg.add_argument("--estimator", choices=ESTIMATORS, default=None)
    p_agg.add_argument("--weighting", choices=WEIGHTINGS, default=None)
    p_agg.add_argument("--trim", type=float, default=None)
    p_agg.set_defaults(func=_cmd_aggregate)

    p_bound = sub.add_parser("bound", help="scalar-combiner error versus S and K")
    p_bound.add_argument("--S", dest="s_values", type=int, nargs="+", required=True)
    p_bound.add_argument("--K", dest="k_values", type=int, nargs="+", required=True)
    p_bound.add_argument("--alpha", type=float, default=0.2)
    p_bound.add_argument("--trials", type=int, default=50)
    p_bound.add_argument("--seed", type=int, default=0)
    p_bound.add_argument("--magnitude", type=float, default=1e3)
    p_bound.add_argument("--lambda", dest="lam", type=float, default=2.0)
    p_bound.add_argument("--delta", type=float, default=0.01)
    p_bound.add_argument("--out", default=None, help="CSV output path")
    p_bound.set_defaults(func=_cmd_bound)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report, do not trace
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
