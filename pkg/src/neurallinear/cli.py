"""Command-line entry point ``nlb``."""
import argparse
import json
import logging
import sys
from pathlib import Path

from . import evalstats, runner
from .errors import ConfigError, NeuralLinearError

EMIT_TARGETS = ("tables", "diffs", "ranks", "toy-curves")
DEFAULT_TOY_MODELS = ("bn-ml-nl-2", "bn-bo-nl-2")


def parse_splits(text):
    """``"0..4"`` (inclusive), ``"3"`` or ``"1,5,7"`` -> tuple of indices."""
    if text is None:
        return None
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ConfigError(f"empty split range {text!r}")
            return tuple(range(lo, hi + 1))
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse split selection {text!r}") from None


def _experiment_args(p, need_dataset=True):
    p.add_argument("--model", action="append", help="model tag; repeat for several models")
    if need_dataset:
        p.add_argument("--dataset", required=True, help="dataset name (manifest under $NLB_DATA_DIR)")
        p.add_argument("--splits", help="split indices: a..b inclusive, k, or a comma list")
        p.add_argument("--gap", action="store_true", help="use gap splits instead of random splits")
    p.add_argument("--no-tune", action="store_true", help="use fixed default hyperparameters")
    p.add_argument("--no-slice", action="store_true", help="skip slice sampling of head hyperparameters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bo-iters", type=int, default=50, help="Bayesian optimization iterations after 10 random probes")
    p.add_argument("--out", default="results", help="output directory for records and artifacts")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes over splits")


def build_parser():
    parser = argparse.ArgumentParser(prog="nlb", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and evaluate models on dataset splits")
    _experiment_args(p)

    p = sub.add_parser("toy", help="run the cubic toy problem and emit predictive curves")
    _experiment_args(p, need_dataset=False)

    p = sub.add_parser("emit", help="write tables, differences, ranks or toy curves from records")
    p.add_argument("records", help="records.jsonl or a directory containing it")
    p.add_argument("--what", choices=EMIT_TARGETS + ("all",), default="all")
    p.add_argument("--out", default=None, help="output directory (default: next to the records)")

    p = sub.add_parser("compare", help="Wilcoxon signed-rank verdicts of run A against run B")
    p.add_argument("run_a")
    p.add_argument("run_b")

    p = sub.add_parser("stats", help="Friedman average ranks and critical difference")
    p.add_argument("records")
    p.add_argument("--metric", choices=evalstats.METRIC_KEYS, default="test_ll")
    return parser


def _run(args, dataset, splits, gap):
    models = args.model or (list(DEFAULT_TOY_MODELS) if dataset == "toy" else None)
    if not models:
        raise ConfigError("at least one --model is required")
    configs = [
        runner.ExperimentConfig(
            model=m, dataset=dataset, splits=splits, gap=gap, tune=not args.no_tune, slice=not args.no_slice,
            seed=args.seed, bo_iters=args.bo_iters, out=args.out, workers=args.workers,
        )
        for m in models
    ]
    records = []
    for cfg in configs:
        recs = runner.run_experiment(cfg)
        records.extend(recs)
        for r in recs:
            status = f"FAILED {r.error}" if r.failed else f"test LL {r.test_ll:.4f}  RMSE {r.test_rmse:.4f}"
            print(f"{r.dataset} {r.model} split {r.split}: {status}")
    return records


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            records = _run(args, args.dataset, parse_splits(args.splits), args.gap)
            return 1 if any(r.failed for r in records) else 0
        if args.command == "toy":
            records = _run(args, "toy", None, False)
            for p in runner.emit(records, "toy-curves", args.out):
                print(f"wrote {p}")
            return 1 if any(r.failed for r in records) else 0
        if args.command == "emit":
            records = runner.load_records(args.records)
            src = Path(args.records)
            out = args.out or (src if src.is_dir() else src.parent)
            for what in EMIT_TARGETS if args.what == "all" else (args.what,):
                try:
                    for p in runner.emit(records, what, out):
                        print(f"wrote {p}")
                except NeuralLinearError as exc:
                    if args.what != "all":
                        raise
                    print(f"skipped {what}: {exc}", file=sys.stderr)
            return 0
        if args.command == "compare":
            table = runner.compare(runner.load_records(args.run_a), runner.load_records(args.run_b))
            print(json.dumps(table, indent=2, sort_keys=True))
            return 0
        if args.command == "stats":
            report = evalstats.rank_records(
                [r.to_json() for r in runner.load_records(args.records)], args.metric
            )
            print(json.dumps(runner.to_jsonable(report.to_json()), indent=2, sort_keys=True))
            return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NeuralLinearError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
