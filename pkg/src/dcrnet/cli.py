"""Command-line entry point: ``dcrnet <subcommand> [flags]``.

Exit codes: 0 on success, 1 on usage errors, 2 when inputs fail validation
or a check (gradcheck, oracle-check) fails.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import TrainConfig, format_config, load_config

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, out_help):
    p.add_argument("--seed", type=int, default=None, help="root seed (default: config value, else 0)")
    p.add_argument("--out", type=Path, default=None, help=out_help)
    p.add_argument("--threads", type=int, default=1, help="worker threads where supported")
    p.add_argument("-v", "--verbose", action="store_true")


def _train_flags(p):
    p.add_argument("--config", type=Path, default=None, help="key=value config file; flags override it")
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        cast = int if f.type in ("int", int) else float
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=cast, default=None)


def build_parser():
    parser = _Parser(prog="dcrnet", description="Long-tail classifier head on fixed features.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("gen", help="generate a synthetic long-tailed train/test pair")
    _common(p, "output directory (train.dcrf, test.dcrf)")
    p.add_argument("--num-classes", type=int, default=50)
    p.add_argument("--samples-max", type=int, default=500)
    p.add_argument("--imbalance-factor", type=float, default=100.0)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--cluster-spread", type=float, default=0.4)
    p.add_argument("--drift-strength", type=float, default=0.5)
    p.add_argument("--test-per-class", type=int, default=50)
    p.add_argument("--head-threshold", type=float, default=100)

    p = sub.add_parser("stats", help="print per-class statistics and the drift table")
    _common(p, "write the report to this file instead of stdout")
    p.add_argument("--train", type=Path, required=True, help="training features (.dcrf or .csv)")
    _train_flags(p)

    p = sub.add_parser("train", help="train the dual-branch head")
    _common(p, "output directory (model.dcrm, train_report.json, loss_curves.png)")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--no-plots", action="store_true")
    _train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on test features")
    _common(p, "output directory (eval_report.json, per_class.csv, class_accuracy.png)")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--many-threshold", type=int, default=100)
    p.add_argument("--few-threshold", type=int, default=20)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("diagnose", help="train/test feature drift diagnostics")
    _common(p, "output directory for CSVs and figures")
    p.add_argument("--train", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--model", type=Path, default=None, help="take class statistics from this checkpoint")
    p.add_argument("--no-compensation", action="store_true")
    p.add_argument("--no-plots", action="store_true")
    _train_flags(p)

    p = sub.add_parser("oracle-check", help="compare the closed-form compensated loss with Monte-Carlo")
    _common(p, "also write the result lines to this file")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--no-degenerate", action="store_true", help="skip the beta = 0 equality instances")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    _common(p, "also write the report to this file")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--logit-scale", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=8)
    return parser


def _config_from(args):
    base = TrainConfig()
    if args.config is not None:
        base = load_config(args.config)
    overrides = {f.name: getattr(args, f.name, None) for f in fields(TrainConfig)}
    return base.with_overrides(**overrides)


def _outdir(args):
    if args.out is None:
        raise UsageError(f"dcrnet {args.command}: error: --out DIRECTORY is required")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _emit(text, path):
    print(text)
    if path is not None:
        Path(path).write_text(text + "\n")


def cmd_gen(args):
    from .data import LongTailSpec, generate_longtail, write_features

    out = _outdir(args)
    spec = LongTailSpec(
        num_classes=args.num_classes, samples_max=args.samples_max, imbalance_factor=args.imbalance_factor,
        dim=args.dim, cluster_spread=args.cluster_spread, drift_strength=args.drift_strength,
        seed=args.seed or 0, test_per_class=args.test_per_class, head_threshold=args.head_threshold,
    )
    train, test = generate_longtail(spec)
    write_features(train, out / "train.dcrf")
    write_features(test, out / "test.dcrf")
    print(f"wrote {out / 'train.dcrf'} ({len(train)} samples) and {out / 'test.dcrf'} ({len(test)} samples)")
    return EXIT_OK


def cmd_stats(args):
    from .data import load_features
    from .stats import build_class_stats, format_stats_report

    config = _config_from(args)
    stats = build_class_stats(load_features(args.train), config)
    report = format_stats_report(stats)
    if args.out is None:
        sys.stdout.write(report)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report)
    return EXIT_OK


def cmd_train(args):
    from .checkpoint import save_checkpoint
    from .data import load_features
    from .training import train

    out = _outdir(args)
    config = _config_from(args)
    train_set = load_features(args.train)
    model, report = train(train_set, config)
    save_checkpoint(model, out / "model.dcrm")
    data = report.as_dict()
    # wall clock varies run to run; keep the file reproducible and print it instead
    data.pop("wall_clock_seconds")
    data["config"] = {f.name: getattr(config, f.name) for f in fields(config)}
    (out / "train_report.json").write_text(json.dumps(data, indent=2) + "\n")
    (out / "config.txt").write_text(format_config(config))
    if not args.no_plots and report.loss:
        from .plotting import plot_training_curves

        plot_training_curves(report, out / "loss_curves.png")
    final = f"final loss {report.loss[-1]:.5f}" if report.loss else "no epochs run"
    print(f"trained {report.iterations} iterations in {report.wall_clock:.2f}s; {final}; wrote {out}")
    return EXIT_OK


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .data import load_features
    from .evaluation import evaluate

    out = _outdir(args)
    model = load_checkpoint(args.model)
    test = load_features(args.test)
    counts = model.stats.class_counts
    report = evaluate(model, test, counts, (args.many_threshold, args.few_threshold))
    (out / "eval_report.json").write_text(report.to_json() + "\n")
    report.write_csv(out / "per_class.csv", counts)
    if not args.no_plots:
        from .plotting import plot_class_accuracy

        plot_class_accuracy(report, counts, out / "class_accuracy.png")

    def pct(v):
        return "n/a" if v is None else f"{100 * v:.2f}"

    s = report.splits
    print(f"top-1 {pct(report.overall)}  many {pct(s['many'])}  medium {pct(s['medium'])}  few {pct(s['few'])}")
    return EXIT_OK


def cmd_diagnose(args):
    from .data import load_features
    from .evaluation import drift_report
    from .stats import build_class_stats

    out = _outdir(args)
    train_set = load_features(args.train)
    test = load_features(args.test)
    if args.model is not None:
        from .checkpoint import load_checkpoint

        stats = load_checkpoint(args.model).stats
    else:
        stats = build_class_stats(train_set, _config_from(args))
    report = drift_report(train_set, test, stats, compensated=not args.no_compensation)
    paths = report.write_csvs(out)
    if not args.no_plots:
        from .plotting import plot_drift_report

        paths += plot_drift_report(report, out)
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_oracle_check(args):
    from .oracle import run_oracle_check

    if args.instances < 1 or args.samples < 1:
        raise ValueError("--instances and --samples must be positive")
    results = run_oracle_check(args.instances, args.samples, args.seed or 0, args.threads, not args.no_degenerate)
    failed = sum(not r.passed for r in results)
    lines = [r.line() for r in results]
    lines.append(f"{'FAIL' if failed else 'PASS'}: {len(results) - failed}/{len(results)} instances passed")
    _emit("\n".join(lines), args.out)
    return EXIT_FAILED if failed else EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import gradcheck

    if args.trials < 1:
        raise ValueError("--trials must be at least 1")
    report = gradcheck(trials=args.trials, seed=args.seed or 0, dim=args.dim, logit_scale=args.logit_scale)
    _emit(report.summary(), args.out)
    return EXIT_OK if report.passed else EXIT_FAILED


COMMANDS = {
    "gen": cmd_gen,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "diagnose": cmd_diagnose,
    "oracle-check": cmd_oracle_check,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None):
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    from .checkpoint import CheckpointError
    from .data import DcrfError
    from .training import TrainingError

    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if args.threads < 1:
            raise UsageError(f"dcrnet {args.command}: error: --threads must be at least 1")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DcrfError, CheckpointError, TrainingError, ValueError, OSError) as exc:
        print(f"dcrnet {argv[0]}: {exc}", file=sys.stderr)
        return EXIT_FAILED


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
