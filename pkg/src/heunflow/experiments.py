"""Experiment runners behind the CLI subcommands.

Every runner takes a resolved, JSON-serialisable config dict and an output
directory, writes ``metrics.csv`` (or ``summary.csv``), ``config.json`` and
``plot.svg``, and returns a small result dict.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import data, ode_solvers, svg
from .training import (
    MetricsHistory,
    MetricsRecord,
    TrainConfig,
    train_classifier,
    train_seq_predictor,
)

DEFAULT_H = (0.1, 0.05, 0.025, 0.0125)
SWEEP_ALPHAS = (0.0, 0.25, 0.5, 0.75, 0.8, 0.9, 1.0)

# Per-task training defaults; anything here can be overridden from the CLI.
TASK_DEFAULTS = {
    "mnist": dict(hidden=128, depth=3, epochs=10, batch_size=64, lr=1e-3, sequence_steps=28),
    "ecg": dict(hidden=128, depth=3, epochs=100, batch_size=64, lr=1e-3, sequence_steps=187),
    "sine": dict(hidden=32, epochs=100, batch_size=32, lr=3e-3, loss="mse", window=64,
                 window_stride=8, seed_steps=32),
}
TASK_EXTRAS = {
    "mnist": dict(subset_size=10000, test_size=2000),
    "ecg": dict(subset_size=20000, test_fraction=0.2),
    "sine": dict(total_length=16 * math.pi, n_points=512),
}


def write_config(out_dir, config):
    with open(Path(out_dir) / "config.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _history_plot(path, histories: dict, title):
    loss = svg.Panel(f"{title}: loss", "iteration", "loss")
    acc = svg.Panel(f"{title}: accuracy", "iteration", "eval accuracy")
    for name, h in histories.items():
        it = h.column("iteration")
        loss.add(f"{name} train", it, h.column("train_loss"))
        loss.add(f"{name} eval", it, h.column("eval_loss"))
        acc.add(name, it, h.column("eval_accuracy"))
    svg.write(path, [loss, acc])


# ---------------------------------------------------------------- ode bench


def ode_bench(config, out_dir):
    """Endpoint error and fitted order for each method on ``x' = 2 sqrt(x)``."""
    problem = ode_solvers.sqrt_growth_problem(config["t_end"])
    h_list = list(config["h_list"])
    methods = [("euler", 0.5), ("heun", 0.5), ("weighted_heun", config["weighted_alpha"])]
    rows, orders = [], {}
    panel = svg.Panel("endpoint error vs step size", "h", "|x(T) - (T+1)^2|", log_x=True, log_y=True)
    for method, alpha in methods:
        order, errors = ode_solvers.empirical_order(problem, method, h_list, alpha)
        label = method if method != "weighted_heun" else f"weighted_heun({alpha:g})"
        orders[label] = order
        panel.add(label, h_list, errors)
        rows.extend((label, h, err, order) for h, err in zip(h_list, errors))
    with open(Path(out_dir) / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "h", "endpoint_error", "fitted_order"))
        for label, h, err, order in rows:
            w.writerow((label, f"{h:.9g}", f"{err:.9g}", f"{order:.9g}"))
    svg.write(Path(out_dir) / "plot.svg", [panel])
    return {"orders": orders}


# ---------------------------------------------------------------- classification tasks


def _data_root(config):
    root = config.get("data_dir") or data.default_data_dir()
    if not root:
        raise FileNotFoundError("no dataset directory: pass --data-dir or set HEUNFLOW_DATA_DIR")
    return root


def load_task_data(command, config):
    root = _data_root(config)
    seed = config["train"]["seed"]
    if command == "mnist":
        train = data.stratified_subset(data.load_mnist_dir(root, "train"), config["subset_size"], seed)
        test = data.stratified_subset(data.load_mnist_dir(root, "test"), config["test_size"], seed)
        return train, test
    pooled = data.stratified_subset(data.load_ecg_dir(root), config["subset_size"], seed)
    return data.stratified_split(pooled, config["test_fraction"], seed)


def classify(command, config, out_dir, datasets=None, progress=None):
    train, test = datasets or load_task_data(command, config)
    tc = TrainConfig.from_dict(config["train"])
    history = train_classifier(tc, train, test, progress=progress)
    history.write_csv(Path(out_dir) / "metrics.csv")
    _history_plot(Path(out_dir) / "plot.svg", {_label(tc): history}, command)
    return {"history": history}


def _label(tc):
    if tc.model != "blocks":
        return tc.model
    return f"extheun({tc.alpha:g})" if tc.family == "extheun" else tc.family


# ---------------------------------------------------------------- sine


def sine(config, out_dir, progress=None):
    ds = data.gen_sine(config["total_length"], config["n_points"])
    tc = TrainConfig.from_dict(config["train"])
    result = train_seq_predictor(tc, ds, progress=progress)
    result.history.write_csv(Path(out_dir) / "metrics.csv")
    with open(Path(out_dir) / "generated.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "truth", "generated"))
        for k, (a, b) in enumerate(zip(result.truth, result.generated)):
            w.writerow((k, f"{a:.9g}", f"{b:.9g}"))
    _history_plot(Path(out_dir) / "plot.svg", {_label(tc): result.history}, "sine")
    return {"history": result.history, "generation_mse": result.generation_mse}


# ---------------------------------------------------------------- alpha sweep


def _sweep_one(args):
    task, config, alpha, out_dir = args
    sub = dict(config)
    sub["train"] = dict(config["train"], family="extheun", alpha=alpha)
    run_dir = Path(out_dir) / f"alpha_{alpha:g}"
    run_dir.mkdir(parents=True, exist_ok=True)
    write_config(run_dir, {**sub, "command": task})
    result = run_task(task, sub, run_dir)
    return alpha, result["history"]


def alpha_sweep(config, out_dir, parallel=False):
    """One extended-heun run per alpha; summary row is (alpha, best accuracy, its iteration)."""
    task = config["task"]
    jobs = [(task, config, float(a), str(out_dir)) for a in config["alphas"]]
    if parallel:
        with ProcessPoolExecutor() as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    summary = []
    for alpha, history in results:
        best = history.best() if len(history) else None
        summary.append((alpha, best.eval_accuracy if best else float("nan"),
                        best.iteration if best else 0))
    with open(Path(out_dir) / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("alpha", "best_accuracy", "best_iteration"))
        for alpha, acc, it in summary:
            w.writerow((f"{alpha:.9g}", f"{acc:.9g}", it))
    curves = svg.Panel(f"{task}: accuracy per alpha", "iteration", "eval accuracy")
    for alpha, history in results:
        curves.add(f"alpha={alpha:g}", history.column("iteration"), history.column("eval_accuracy"))
    peak = svg.Panel("best accuracy vs alpha", "alpha", "best accuracy")
    peak.add("best", [s[0] for s in summary], [s[1] for s in summary])
    svg.write(Path(out_dir) / "plot.svg", [curves, peak])
    return {"summary": summary, "histories": dict(results)}


def run_task(command, config, out_dir, progress=None):
    if command == "ode-bench":
        return ode_bench(config, out_dir)
    if command in ("mnist", "ecg"):
        return classify(command, config, out_dir, progress=progress)
    if command == "sine":
        return sine(config, out_dir, progress=progress)
    raise ValueError(f"unknown task {command!r}")


def read_metrics(path) -> MetricsHistory:
    history = MetricsHistory()
    with open(path) as fh:
        for row in csv.DictReader(fh):
            history.append(MetricsRecord(int(row["iteration"]), float(row["train_loss"]),
                                         float(row["eval_loss"]), float(row["eval_accuracy"]),
                                         float(row["wall_time_s"])))
    return history


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return Path(path)

