"""Command-line interface.

Exit status: 0 on success, 1 on validation or usage errors, 2 on numerical
failures. Every output is CSV or JSON; the only run-dependent content is a
timestamp isolated on one line.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from .architecture import ard_report, build_model
from .config import load_config
from .data import (
    SARCOS_FEATURES,
    CsvSchema,
    Standardizer,
    fit_standardizer,
    generate_toy,
    load_csvs,
    sarcos_split,
    write_csv,
)
from .evaluation import accuracy, bernoulli_probability, nlpp, predict, rmse, roc_auc
from .exceptions import EmptyFile, MTDGPError, NumericalError, SchemaMismatch, ValidationError
from .objective import MonteCarloConfig
from .rng import RngStream
from .training import load_checkpoint, save_checkpoint, train, write_trace

logger = logging.getLogger("mtdgp")

REGRESSION_METRICS = ("nlpp", "rmse")
CLASSIFICATION_METRICS = ("nlpp", "auc", "accuracy")


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _timestamp():
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def _write_json(path, body):
    """JSON with ``created`` on its own first line, everything else deterministic."""
    text = json.dumps({"created": _timestamp(), **body}, indent=2)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def identity_standardizer(input_dim, output_dim, tasks):
    return Standardizer(
        np.zeros(input_dim),
        np.ones(input_dim),
        np.zeros((tasks, output_dim)),
        np.ones((tasks, output_dim)),
        np.zeros(input_dim, dtype=bool),
        np.zeros((tasks, output_dim), dtype=bool),
    )


def _load_model(path):
    model, extras = load_checkpoint(path, return_extras=True)
    spec = model.spec
    st = (
        Standardizer.from_dict(extras["standardizer"])
        if "standardizer" in extras
        else identity_standardizer(spec.input_dim, spec.output_dim, spec.tasks)
    )
    if "schema" in extras:
        schema = CsvSchema.from_dict(extras["schema"])
    else:
        schema = CsvSchema([f"x{i}" for i in range(spec.input_dim)], [f"y{i}" for i in range(spec.output_dim)])
    mc = MonteCarloConfig.from_dict(extras.get("monte_carlo", {}))
    return model, st, schema, mc


# ------------------------------------------------------------------ commands


def cmd_generate_toy(args):
    os.makedirs(args.out, exist_ok=True)
    schema = CsvSchema(["x"], ["y"], "task")
    for d in generate_toy(args.n, args.noise, args.seed, grid=args.grid):
        write_csv([d], os.path.join(args.out, f"task_{d.task_id}.csv"), schema)
    return 0


def cmd_train(args):
    cfg = load_config(args.config)
    spec = cfg.spec
    raw = load_csvs(args.data, cfg.schema)
    gaussian = spec.likelihood == "gaussian"
    if cfg.standardize:
        st = fit_standardizer(raw, outputs=gaussian)
    else:
        st = identity_standardizer(spec.input_dim, spec.output_dim, spec.tasks)
    data = st.apply(raw)
    model = build_model(spec, cfg.init, RngStream(cfg.train.seed), data)
    model, trace = train(model, data, cfg.train, cfg.weights, cfg.mc)
    extras = {
        "standardizer": st.to_dict(),
        "schema": cfg.schema.to_dict(),
        "monte_carlo": cfg.mc.to_dict(),
        "config": cfg.raw,
    }
    save_checkpoint(model, args.out_checkpoint, extras, cfg.init)
    if args.trace:
        write_trace(trace, args.trace, timing=args.trace_timing)
    logger.info("final elbo %.6f", trace[-1].elbo)
    return 0


def _tasks_to_run(model, data, task):
    if task is None:
        return [t for t in range(model.spec.tasks) if t < len(data) and data[t].n > 0]
    if not 0 <= task < model.spec.tasks:
        raise ValidationError(f"--task {task} outside [0, {model.spec.tasks})")
    if task >= len(data) or data[task].n == 0:
        raise EmptyFile(f"no rows for task {task}")
    return [task]


def _read_for_model(model, schema, paths):
    schema = CsvSchema(schema.features, schema.targets, schema.task_id, model.spec.tasks)
    return load_csvs(paths, schema), schema


def cmd_predict(args):
    model, st, schema, mc = _load_model(args.checkpoint)
    if args.samples:
        mc = MonteCarloConfig(mc.train_samples, args.samples, mc.quadrature_points)
    data, schema = _read_for_model(model, schema, [args.data])
    gaussian = model.spec.likelihood == "gaussian"
    header = list(schema.features) + [schema.task_id]
    for name in schema.targets:
        header += [f"{name}_mean", f"{name}_var"] if gaussian else [f"{name}_prob"]
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in _tasks_to_run(model, data, args.task):
            d = data[t]
            pred = predict(model, st.apply_inputs(d.inputs), t, mc, RngStream(args.seed))
            if gaussian:
                pred = pred.scaled(st.output_std[t], st.output_mean[t])
                cols = np.column_stack(
                    [np.column_stack([m, v]) for m, v in zip(pred.mean().T, pred.variance().T)]
                )
            else:
                cols = bernoulli_probability(pred, mc.quadrature_points)
            for x, c in zip(d.inputs, cols):
                writer.writerow([repr(float(v)) for v in x] + [t] + [repr(float(v)) for v in c])
    return 0


def _bernoulli_nlpp(prob, y):
    p = np.clip(np.where(y == 1, prob, 1.0 - prob), 1e-300, 1.0)
    return float(-np.mean(np.log(p)))


def cmd_eval(args):
    model, st, schema, mc = _load_model(args.checkpoint)
    if args.samples:
        mc = MonteCarloConfig(mc.train_samples, args.samples, mc.quadrature_points)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    gaussian = model.spec.likelihood == "gaussian"
    allowed = REGRESSION_METRICS if gaussian else CLASSIFICATION_METRICS
    bad = [m for m in metrics if m not in allowed]
    if bad or not metrics:
        raise ValidationError(
            f"--metrics {','.join(bad) or '(empty)'} not available for a {model.spec.likelihood} model; "
            f"choose from {', '.join(allowed)}"
        )
    data, schema = _read_for_model(model, schema, args.data)
    per_task = {}
    for t in _tasks_to_run(model, data, None):
        d = data[t]
        pred = predict(model, st.apply_inputs(d.inputs), t, mc, RngStream(args.seed))
        row = {"n": d.n}
        if gaussian:
            original = pred.scaled(st.output_std[t], st.output_mean[t])
            if "nlpp" in metrics:
                row["nlpp"] = nlpp(pred, st.apply_outputs(d.outputs, t))
                row["nlpp_original_scale"] = nlpp(original, d.outputs)
            if "rmse" in metrics:
                row["rmse"] = rmse(original.mean(), d.outputs)
        else:
            prob = bernoulli_probability(pred, mc.quadrature_points).reshape(-1)
            y = d.outputs.reshape(-1)
            if "nlpp" in metrics:
                row["nlpp"] = _bernoulli_nlpp(prob, y)
            if "auc" in metrics:
                row["auc"] = roc_auc(prob, y)
            if "accuracy" in metrics:
                row["accuracy"] = accuracy(prob, y)
        per_task[str(t)] = row
    body = {
        "variant": model.spec.variant,
        "likelihood": model.spec.likelihood,
        "eval_samples": mc.eval_samples,
        "seed": args.seed,
        "scales": {
            "nlpp": "standardized targets",
            "nlpp_original_scale": "original targets",
            "rmse": "original targets",
        },
        "tasks": per_task,
    }
    _write_json(args.out, body)
    return 0


def cmd_export_ard(args):
    model, _, _, _ = _load_model(args.checkpoint)
    report = ard_report(model)
    body = {"variant": model.spec.variant, "tasks": {str(t): rows for t, rows in report.items()}}
    _write_json(args.out, body)
    return 0


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyFile(f"{path}: no rows")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        table = np.asarray([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise SchemaMismatch(f"{path}: non-numeric or ragged rows ({exc})") from None
    if table.size == 0:
        raise EmptyFile(f"{path}: no data rows")
    return table


def cmd_sarcos_split(args):
    table = _read_table(args.input)
    parts = sarcos_split(table, args.n, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    schema = CsvSchema([f"x{i}" for i in range(SARCOS_FEATURES)], ["torque"], "task")
    write_csv(parts, os.path.join(args.out_dir, "train.csv"), schema)
    used = np.concatenate([p.point_ids for p in parts])
    rest = np.setdiff1d(np.arange(table.shape[0]), used)
    with open(os.path.join(args.out_dir, "split.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"seed": args.seed, "n": args.n, "task_sizes": [p.n for p in parts],
             "train_rows": [p.point_ids.tolist() for p in parts], "unused_rows": int(rest.size)},
            fh,
        )
        fh.write("\n")
    return 0


# -------------------------------------------------------------------- parser


def build_parser():
    parser = _Parser(prog="mtdgp", description="Multi-task deep Gaussian processes.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate-toy", help="write the two-task toy dataset as CSV")
    p.add_argument("--n", type=int, required=True, help="points per task")
    p.add_argument("--noise", type=float, default=0.0, help="output noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", action="store_true", help="evenly spaced inputs instead of uniform draws")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate_toy)

    p = sub.add_parser("train", help="fit a model described by a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True, nargs="+", help="one or more CSV files")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--trace", help="write the ELBO trace as CSV")
    p.add_argument("--trace-timing", action="store_true", help="add a wall-clock column to the trace")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write predictive means and variances as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", type=int, help="only predict rows of this task")
    p.add_argument("--samples", type=int, help="override the number of Monte Carlo samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="compute per-task metrics as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--metrics", default="nlpp,rmse", help="comma list of nlpp, rmse, auc, accuracy")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-ard", help="write the per-task head ARD weights as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_ard)

    p = sub.add_parser("sarcos-split", help="sample a SARCOS training set with one torque per row")
    p.add_argument("--in", dest="input", required=True, help="CSV with 21 feature and 7 target columns")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sarcos_split)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (MTDGPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
