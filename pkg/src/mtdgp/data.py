"""Task datasets, CSV ingestion, standardisation and dataset generators."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    EmptyFile,
    MalformedRow,
    SchemaMismatch,
    ShapeMismatch,
    UnknownTaskId,
    ValidationError,
)

SARCOS_FEATURES = 21
SARCOS_TARGETS = 7


@dataclass
class TaskDataset:
    """Inputs and outputs observed for one task.

    ``point_ids`` identify rows for Monte Carlo noise keying; they default to
    the row index and travel with :meth:`subset`.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    task_id: int = 0
    point_ids: np.ndarray = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.outputs = np.asarray(self.outputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs.reshape(-1, 1)
        if self.outputs.ndim == 1:
            self.outputs = self.outputs.reshape(-1, 1)
        if self.inputs.ndim != 2 or self.outputs.ndim != 2:
            raise ShapeMismatch("inputs and outputs must be 2-D")
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ShapeMismatch(
                f"task {self.task_id}: {self.inputs.shape[0]} input rows vs {self.outputs.shape[0]} output rows"
            )
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.outputs))):
            raise ValidationError(f"task {self.task_id}: non-finite values")
        if self.point_ids is None:
            self.point_ids = np.arange(self.inputs.shape[0], dtype=np.int64)
        else:
            self.point_ids = np.asarray(self.point_ids, dtype=np.int64)
            if self.point_ids.shape != (self.inputs.shape[0],):
                raise ShapeMismatch("point_ids must have one entry per row")

    @property
    def n(self):
        return self.inputs.shape[0]

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return TaskDataset(self.inputs[index], self.outputs[index], self.task_id, self.point_ids[index])


# ---------------------------------------------------------------------- toy


def toy_shared(x):
    return -np.sin(8.0 * np.pi * (x + 1.0)) / (2.0 * x + 1.0) - x**4


def toy_task1(x):
    return np.cos(toy_shared(x)) ** 2 + np.sin(3.0 * x)


def toy_task2(x):
    return np.sin(10.0 * x) * toy_shared(x) ** 2 + 3.0 * x


TOY_FUNCTIONS = (toy_task1, toy_task2)


def generate_toy(n_per_task, noise_sd=0.0, seed=0, grid=False):
    """Two tasks built from one shared and two private processes on [0, 1].

    Each task draws its own uniform locations (a regular grid with
    ``grid=True``), then adds N(0, noise_sd^2) noise to the outputs.
    """
    if n_per_task < 1:
        raise ValidationError("n_per_task must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for t, f in enumerate(TOY_FUNCTIONS):
        x = np.linspace(0.0, 1.0, n_per_task) if grid else np.sort(rng.uniform(0.0, 1.0, n_per_task))
        y = f(x) + noise_sd * rng.standard_normal(n_per_task)
        out.append(TaskDataset(x.reshape(-1, 1), y.reshape(-1, 1), t))
    return out


# ---------------------------------------------------------------------- CSV


@dataclass
class CsvSchema:
    features: list
    targets: list
    task_id: str = "task"
    n_tasks: int = None

    def to_dict(self):
        return {"features": list(self.features), "targets": list(self.targets), "task_id": self.task_id,
                "n_tasks": self.n_tasks}

    @classmethod
    def from_dict(cls, d):
        return cls(list(d["features"]), list(d["targets"]), d.get("task_id", "task"), d.get("n_tasks"))


def _parse_task(raw, line):
    try:
        value = float(raw)
    except ValueError:
        raise MalformedRow(line, f"task id {raw!r} is not a number") from None
    if not value.is_integer():
        raise UnknownTaskId(f"line {line}: task id {raw!r} is not an integer")
    return int(value)


def load_csv(path, schema):
    """Read a CSV with one observation per row and group it by task.

    Every row observes a single task, so tasks need not share input
    locations. Returns one :class:`TaskDataset` per task id ``0..T-1``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise EmptyFile(f"{path}: no header row")
        header = [h.strip() for h in header]
        wanted = list(schema.features) + list(schema.targets) + [schema.task_id]
        missing = [c for c in wanted if c not in header]
        if missing:
            raise SchemaMismatch(f"{path}: missing columns {missing}")
        feat_idx = [header.index(c) for c in schema.features]
        targ_idx = [header.index(c) for c in schema.targets]
        task_idx = header.index(schema.task_id)

        rows_x, rows_y, rows_t = [], [], []
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, got {len(row)}")
            try:
                rows_x.append([float(row[i]) for i in feat_idx])
                rows_y.append([float(row[i]) for i in targ_idx])
            except ValueError as exc:
                raise MalformedRow(line, str(exc)) from None
            if not (np.all(np.isfinite(rows_x[-1])) and np.all(np.isfinite(rows_y[-1]))):
                raise MalformedRow(line, "non-finite value")
            rows_t.append(_parse_task(row[task_idx], line))
    if not rows_t:
        raise EmptyFile(f"{path}: no data rows")

    tasks = np.asarray(rows_t)
    n_tasks = schema.n_tasks if schema.n_tasks is not None else int(tasks.max()) + 1
    bad = (tasks < 0) | (tasks >= n_tasks)
    if np.any(bad):
        raise UnknownTaskId(f"{path}: task id {int(tasks[bad][0])} outside [0, {n_tasks})")
    x = np.asarray(rows_x, dtype=np.float64).reshape(len(rows_t), len(feat_idx))
    y = np.asarray(rows_y, dtype=np.float64).reshape(len(rows_t), len(targ_idx))
    return [TaskDataset(x[tasks == t], y[tasks == t], t) for t in range(n_tasks)]


def load_csvs(paths, schema):
    """Load several CSV files sharing one schema and merge them task by task."""
    parts = [load_csv(p, schema) for p in paths]
    n_tasks = max(len(p) for p in parts)
    out = []
    for t in range(n_tasks):
        chunks = [p[t] for p in parts if t < len(p)]
        out.append(
            TaskDataset(
                np.vstack([c.inputs for c in chunks]), np.vstack([c.outputs for c in chunks]), t
            )
        )
    return out


def write_csv(datasets, path, schema):
    """Write datasets in the layout :func:`load_csv` reads (round-trip exact)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(schema.features) + list(schema.targets) + [schema.task_id])
        for d in datasets:
            for xrow, yrow in zip(d.inputs, d.outputs):
                writer.writerow([repr(float(v)) for v in xrow] + [repr(float(v)) for v in yrow] + [d.task_id])


# ------------------------------------------------------------ standardising


@dataclass
class Standardizer:
    """Global input statistics and per-task output statistics.

    Zero-variance columns are flagged in ``*_degenerate`` and map to zero.
    """

    input_mean: np.ndarray
    input_std: np.ndarray
    output_mean: np.ndarray
    output_std: np.ndarray
    input_degenerate: np.ndarray = field(default=None)
    output_degenerate: np.ndarray = field(default=None)

    def apply_inputs(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.input_mean) / self.input_std
        return np.where(self.input_degenerate, 0.0, z)

    def invert_inputs(self, z):
        return np.asarray(z, dtype=np.float64) * self.input_std + self.input_mean

    def apply_outputs(self, y, task):
        z = (np.asarray(y, dtype=np.float64) - self.output_mean[task]) / self.output_std[task]
        return np.where(self.output_degenerate[task], 0.0, z)

    def invert_outputs(self, z, task):
        return np.asarray(z, dtype=np.float64) * self.output_std[task] + self.output_mean[task]

    def invert_variances(self, v, task):
        return np.asarray(v, dtype=np.float64) * self.output_std[task] ** 2

    def apply(self, datasets):
        return [
            TaskDataset(self.apply_inputs(d.inputs), self.apply_outputs(d.outputs, d.task_id), d.task_id, d.point_ids)
            for d in datasets
        ]

    def invert(self, datasets):
        return [
            TaskDataset(self.invert_inputs(d.inputs), self.invert_outputs(d.outputs, d.task_id), d.task_id, d.point_ids)
            for d in datasets
        ]

    def to_dict(self):
        return {k: np.asarray(getattr(self, k)).tolist() for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(
            **{k: np.asarray(v, dtype=bool if k.endswith("degenerate") else np.float64) for k, v in d.items()}
        )


def _stats(a):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    degenerate = ~(std > 0)
    return mean, np.where(degenerate, 1.0, std), degenerate


def fit_standardizer(train, outputs=True):
    """Fit statistics on training data only.

    Inputs are pooled across tasks; outputs are standardised per task. With
    ``outputs=False`` (classification) outputs pass through unchanged.
    """
    pooled = np.vstack([d.inputs for d in train])
    if pooled.shape[0] < 2:
        raise ValidationError("need at least 2 rows to standardise inputs")
    in_mean, in_std, in_deg = _stats(pooled)
    d_out = train[0].outputs.shape[1]
    t_count = max(d.task_id for d in train) + 1
    out_mean = np.zeros((t_count, d_out))
    out_std = np.ones((t_count, d_out))
    out_deg = np.zeros((t_count, d_out), dtype=bool)
    if outputs:
        for d in train:
            if d.n < 2:
                raise ValidationError(f"task {d.task_id}: need at least 2 rows to standardise outputs")
            out_mean[d.task_id], out_std[d.task_id], out_deg[d.task_id] = _stats(d.outputs)
    return Standardizer(in_mean, in_std, out_mean, out_std, in_deg, out_deg)


# -------------------------------------------------------------------- SARCOS


def sarcos_split(table, n, seed):
    """Sample ``n`` rows, give each one of the seven torques at random, split by torque.

    ``table`` has 21 feature columns followed by 7 target columns.
    """
    table = np.asarray(table, dtype=np.float64)
    width = SARCOS_FEATURES + SARCOS_TARGETS
    if table.ndim != 2 or table.shape[1] != width:
        raise SchemaMismatch(f"SARCOS table must have {width} columns, got shape {table.shape}")
    if not 1 <= n <= table.shape[0]:
        raise ValidationError(f"n must be in [1, {table.shape[0]}], got {n}")
    rng = np.random.default_rng(seed)
    rows = rng.choice(table.shape[0], size=n, replace=False)
    joints = rng.integers(0, SARCOS_TARGETS, size=n)
    out = []
    for t in range(SARCOS_TARGETS):
        pick = rows[joints == t]
        out.append(TaskDataset(table[pick, :SARCOS_FEATURES], table[pick, SARCOS_FEATURES + t], t, pick))
    return out


def sarcos_test_sets(table):
    """All seven targets per test row: one dataset per torque over the full table."""
    table = np.asarray(table, dtype=np.float64)
    width = SARCOS_FEATURES + SARCOS_TARGETS
    if table.ndim != 2 or table.shape[1] != width:
        raise SchemaMismatch(f"SARCOS table must have {width} columns, got shape {table.shape}")
    return [TaskDataset(table[:, :SARCOS_FEATURES], table[:, SARCOS_FEATURES + t], t) for t in range(SARCOS_TARGETS)]
