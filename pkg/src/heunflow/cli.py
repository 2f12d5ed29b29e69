"""Command-line entry point: ``heunflow <subcommand> [flags]``.

Exit codes: 0 on success, 1 on runtime errors, 2 on bad flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .errors import HeunflowError
from .training import TrainConfig

TASKS = ("mnist", "ecg", "sine")


def _unit_interval(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number") from None
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{value:g} is outside [0, 1]")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{value} must be >= 1")
    return value


def _shared(p, task=None):
    p.add_argument("--out-dir", required=True, help="directory for metrics.csv, config.json, plot.svg")
    p.add_argument("--seed", type=int, default=0)
    if task is None:
        return
    p.add_argument("--epochs", type=int, help="training epochs (one metrics row per epoch)")
    p.add_argument("--batch-size", type=_positive_int)
    if task != "sweep":
        p.add_argument("--family", choices=("plain", "resnet", "heun", "extheun"), default="heun")
    p.add_argument("--hidden", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--activation", choices=("tanh", "sigmoid", "relu"), default="tanh")
    p.add_argument("--timing", action="store_true",
                   help="record real wall time in metrics.csv (breaks byte-for-byte reruns)")
    p.add_argument("--quiet", action="store_true")
    if task in ("mnist", "ecg"):
        p.add_argument("--model", choices=("blocks", "lstm", "gru"), default="blocks")
    if task in ("mnist", "ecg", "sweep"):
        p.add_argument("--depth", type=_positive_int)
        p.add_argument("--no-share-weights", action="store_true",
                       help="one transition map per layer instead of one shared map")
        p.add_argument("--subset-size", type=_positive_int, help="training-pool size (stratified)")
        p.add_argument("--data-dir", help="dataset root (default: $HEUNFLOW_DATA_DIR)")
    if task in ("sine", "sweep"):
        p.add_argument("--n-points", type=int, default=512)
        p.add_argument("--total-length", type=float, default=experiments.TASK_EXTRAS["sine"]["total_length"])
        p.add_argument("--window", type=_positive_int)
        p.add_argument("--seed-steps", type=_positive_int)


def build_parser():
    parser = argparse.ArgumentParser(prog="heunflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ode-bench", help="Euler vs Heun convergence on x' = 2 sqrt(x)")
    _shared(p)
    p.add_argument("--t-end", type=float, default=4.0, help="integration horizon")
    p.add_argument("--h", type=float, nargs="+", default=list(experiments.DEFAULT_H))
    p.add_argument("--weighted-alpha", type=_unit_interval, default=0.8)

    for task in TASKS:
        p = sub.add_parser(task, help=f"train on the {task} task")
        _shared(p, task)
        p.add_argument("--alpha", type=_unit_interval, help="corrector weight (family extheun only)")

    p = sub.add_parser("alpha-sweep", help="extended-heun runs over several alpha values")
    p.add_argument("--task", choices=TASKS, default="sine")
    _shared(p, "sweep")
    p.add_argument("--alpha", type=_unit_interval, nargs="+", default=list(experiments.SWEEP_ALPHAS))
    p.add_argument("--parallel", action="store_true", help="run alpha values in separate processes")

    p = sub.add_parser("replay", help="rerun from a config.json written by an earlier run")
    p.add_argument("config", help="path to config.json")
    p.add_argument("--out-dir", required=True)
    return parser


def _train_config(args, task):
    overrides = dict(experiments.TASK_DEFAULTS[task])
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"), ("hidden", "hidden"),
                      ("lr", "lr"), ("depth", "depth"), ("window", "window"),
                      ("seed_steps", "seed_steps")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    overrides.update(
        seed=args.seed,
        family=getattr(args, "family", "extheun"),
        optimizer=args.optimizer,
        momentum=args.momentum,
        activation=args.activation,
        record_wall_time=args.timing,
    )
    if getattr(args, "model", None):
        overrides["model"] = args.model
    if getattr(args, "no_share_weights", False):
        overrides["share_weights"] = False
    if args.command == "alpha-sweep":
        overrides["alpha"] = args.alpha[0]
    elif args.family == "extheun":
        overrides["alpha"] = args.alpha
    return TrainConfig(**overrides)


def resolve_config(args, parser):
    """Turn parsed flags into the JSON config that fully describes the run."""
    if args.command == "ode-bench":
        if any(h <= 0 for h in args.h) or len(args.h) < 2:
            parser.error("--h needs at least two positive step sizes")
        if args.t_end <= 0:
            parser.error("--t-end must be positive")
        return {"command": "ode-bench", "seed": args.seed, "t_end": args.t_end,
                "h_list": list(args.h), "weighted_alpha": args.weighted_alpha}

    task = args.task if args.command == "alpha-sweep" else args.command
    if args.command in TASKS:
        if args.alpha is not None and args.family != "extheun":
            parser.error("--alpha is only valid with --family extheun")
        if args.family == "extheun" and args.alpha is None:
            parser.error("--family extheun requires --alpha")
    try:
        tc = _train_config(args, task)
    except ValueError as exc:
        parser.error(str(exc))
    if tc.epochs < 0:
        parser.error("--epochs must be >= 0")
    config = {"command": args.command, "train": tc.to_dict()}
    extras = dict(experiments.TASK_EXTRAS[task])
    if task == "sine":
        extras.update(total_length=args.total_length, n_points=args.n_points)
        if args.n_points < 2:
            parser.error("--n-points must be >= 2")
    else:
        if args.subset_size is not None:
            extras["subset_size"] = args.subset_size
            if task == "mnist":
                extras["test_size"] = max(1, args.subset_size // 5)
        data_dir = args.data_dir or experiments.data.default_data_dir()
        extras["data_dir"] = str(Path(data_dir).resolve()) if data_dir else None
    config.update(extras)
    if args.command == "alpha-sweep":
        config.update(task=task, alphas=list(args.alpha), parallel=args.parallel)
    return config


def _printer(quiet):
    if quiet:
        return None

    def show(r):
        print(f"iter {r.iteration:4d}  train_loss {r.train_loss:.6f}  eval_loss {r.eval_loss:.6f}  "
              f"eval_acc {r.eval_accuracy:.4f}", flush=True)

    return show


def run(config, out_dir, quiet=True):
    """Execute a resolved config; returns the runner's result dict."""
    out = experiments.ensure_dir(out_dir)
    experiments.write_config(out, config)
    command = config["command"]
    if command == "alpha-sweep":
        return experiments.alpha_sweep(config, out, parallel=config.get("parallel", False))
    return experiments.run_task(command, config, out, progress=_printer(quiet))


def _report(config, result):
    if "orders" in result:
        for name, order in result["orders"].items():
            print(f"{name:>22s}  fitted order {order:.3f}")
    elif "summary" in result:
        for alpha, acc, it in result["summary"]:
            print(f"alpha {alpha:<5g} best_accuracy {acc:.4f} at iteration {it}")
    elif "history" in result and len(result["history"]):
        best = result["history"].best()
        print(f"best eval accuracy {best.eval_accuracy:.4f} at iteration {best.iteration}")
        if "generation_mse" in result:
            print(f"free-running generation MSE {result['generation_mse']:.6g}")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            with open(args.config) as fh:
                config = json.load(fh)
            quiet = True
        else:
            config = resolve_config(args, parser)
            quiet = getattr(args, "quiet", True)
        result = run(config, args.out_dir, quiet=quiet)
    except (HeunflowError, OSError, ValueError, KeyError) as exc:
        print(f"heunflow: error: {exc}", file=sys.stderr)
        return 1
    _report(config, result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
