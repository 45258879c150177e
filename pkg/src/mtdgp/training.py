"""Adam training loop, traces and checkpoints.

Convention: the optimiser minimises the negative ELBO, i.e. every step moves
along ``-grad(-ELBO) = +grad(ELBO)``. The trace records the ELBO itself.
"""

import base64
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .architecture import InitRecipe, ModelSpec, build_model
from .exceptions import (
    CorruptCheckpoint,
    NonFiniteGradient,
    NotPositiveDefinite,
    TrainingAborted,
    ValidationError,
    VersionMismatch,
)
from .objective import KLWeights, MonteCarloConfig, full_batch, minibatch_elbo
from .rng import RngStream

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mtdgp-checkpoint"
CHECKPOINT_VERSION = 1
MAX_PD_FAILURES = 10
TRACE_CONVENTION = "objective=ELBO; optimiser descends on -ELBO"


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One bias-corrected Adam step descending along ``grads``.

    ``params`` maps names to :class:`~mtdgp.tensor.Parameter` and ``grads``
    holds gradients of the quantity being minimised with respect to the raw
    (unconstrained) arrays. Parameters are updated in place. A non-finite
    gradient raises before anything changes.
    """
    for name, g in grads.items():
        g = np.asarray(g)
        if g.shape != params[name].shape:
            raise ValidationError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    state.step_count += 1
    b1, b2, k = state.beta1, state.beta2, state.step_count
    for name, g in grads.items():
        p = params[name]
        if not p.trainable:
            continue
        m = state.first_moment.get(name, np.zeros(p.shape))
        v = state.second_moment.get(name, np.zeros(p.shape))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / (1.0 - b1**k)
        v_hat = v / (1.0 - b2**k)
        p.unconstrained = p.unconstrained - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    iterations: int = 1000
    learning_rate: float = 0.01
    batch_size: int = None
    seed: int = 0
    trace_every: int = 1
    checkpoint_path: str = None

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ValidationError("iterations must be >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be > 0")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ValidationError("batch_size must be >= 1 when set")
        if int(self.trace_every) < 1:
            raise ValidationError("trace_every must be >= 1")

    def to_dict(self):
        return {"iterations": self.iterations, "learning_rate": self.learning_rate, "batch_size": self.batch_size,
                "seed": self.seed, "trace_every": self.trace_every, "checkpoint_path": self.checkpoint_path}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TraceRow:
    iteration: int
    elbo: float
    wall_ms: float


class Minibatcher:
    """Per-task batches proportional to task size, without replacement per epoch.

    Task t receives ``round(B * N_t / N)`` points per batch (at least one).
    Each task walks its own permutation, reshuffled from ``seed`` and the
    epoch number whenever it is exhausted.
    """

    def __init__(self, sizes, batch_size, seed):
        self.sizes = [int(n) for n in sizes]
        total = sum(self.sizes)
        self.per_task = [max(1, min(n, int(round(batch_size * n / total)))) for n in self.sizes]
        self.seed = seed
        self.epoch = [0] * len(self.sizes)
        self.cursor = [0] * len(self.sizes)
        self.perm = [self._perm(t) for t in range(len(self.sizes))]

    def _perm(self, t):
        rng = np.random.default_rng([self.seed & (2**63 - 1), t, self.epoch[t]])
        return rng.permutation(self.sizes[t])

    def next(self):
        out = []
        for t, k in enumerate(self.per_task):
            idx = []
            while len(idx) < k:
                if self.cursor[t] >= self.sizes[t]:
                    self.epoch[t] += 1
                    self.cursor[t] = 0
                    self.perm[t] = self._perm(t)
                take = min(k - len(idx), self.sizes[t] - self.cursor[t])
                idx.extend(self.perm[t][self.cursor[t] : self.cursor[t] + take])
                self.cursor[t] += take
            out.append(np.asarray(idx, dtype=np.int64))
        return out


def _state_dump(model, iteration, error):
    params = model.parameters()
    return {
        "iteration": iteration,
        "error": str(error),
        "clamp_count": model.clamp_count(),
        "parameters": {
            k: {"min": float(np.min(p.value)), "max": float(np.max(p.value))} for k, p in params.items()
        },
    }


def train(model, data, cfg=None, weights=None, mc=None, callback=None):
    """Maximise the (weighted) ELBO with Adam.

    Iteration ``k`` draws its Monte Carlo noise from ``RngStream(seed).child(k)``
    and, with ``batch_size`` set, its minibatch from :class:`Minibatcher`.
    Returns ``(model, trace)``; ``trace`` holds one :class:`TraceRow` per
    ``trace_every`` iterations plus the final one.
    """
    cfg = cfg or TrainConfig()
    mc = mc or MonteCarloConfig()
    weights = weights or KLWeights()
    weights.resolve(model.spec)
    params = model.parameters()
    trainable = {k: p for k, p in params.items() if p.trainable}
    state = AdamState(learning_rate=cfg.learning_rate)
    root = RngStream(cfg.seed)
    counts = [d.n for d in data]
    batcher = Minibatcher(counts, cfg.batch_size, cfg.seed) if cfg.batch_size else None
    full_idx, _ = full_batch(data)
    trace = []
    failures = 0
    steps = 0
    start = time.perf_counter()
    logger.info("training %s for %d iterations (%s)", model.spec.variant, cfg.iterations, TRACE_CONVENTION)

    for it in range(1, cfg.iterations + 1):
        batch = batcher.next() if batcher else full_idx
        try:
            objective = minibatch_elbo(model, data, batch, counts, weights, mc, root.child(it))
            grads = tn.gradient(-objective, trainable)
        except NotPositiveDefinite as exc:
            failures += 1
            logger.warning("iteration %d: %s (%d consecutive)", it, exc, failures)
            if failures > MAX_PD_FAILURES:
                dump = _state_dump(model, it, exc)
                logger.error("aborting after %d consecutive factorisation failures: %s", failures, json.dumps(dump))
                raise TrainingAborted(f"{failures} consecutive NotPositiveDefinite failures", dump) from exc
            continue
        failures = 0
        adam_step(trainable, grads, state)
        steps += 1
        value = float(objective.value)
        if it % cfg.trace_every == 0 or it == cfg.iterations:
            row = TraceRow(it, value, (time.perf_counter() - start) * 1e3)
            trace.append(row)
            logger.info("iter %d elbo %.6f", it, value)
            if callback is not None:
                callback(row)

    if steps == 0:
        raise TrainingAborted("no iteration produced a usable objective", _state_dump(model, cfg.iterations, "none"))
    if cfg.checkpoint_path:
        save_checkpoint(model, cfg.checkpoint_path)
    return model, trace


def write_trace(trace, path, header_stamp=None, timing=False):
    """CSV trace; the only run-dependent text is the first comment line's timestamp.

    ``timing=True`` adds a ``wall_ms`` column, which naturally differs between runs.
    """
    stamp = header_stamp if header_stamp is not None else time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# created {stamp}; {TRACE_CONVENTION}\n")
        fh.write("iteration,elbo,wall_ms\n" if timing else "iteration,elbo\n")
        for row in trace:
            if timing:
                fh.write(f"{row.iteration},{row.elbo!r},{row.wall_ms:.3f}\n")
            else:
                fh.write(f"{row.iteration},{row.elbo!r}\n")


def read_trace(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("iteration"):
                continue
            cols = line.strip().split(",")
            ms = float(cols[2]) if len(cols) > 2 else float("nan")
            rows.append(TraceRow(int(cols[0]), float(cols[1]), ms))
    return rows


# --------------------------------------------------------------- checkpoints


def _encode(array):
    a = np.asarray(array, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes(order="C")).decode("ascii")}


def _decode(entry):
    raw = base64.b64decode(entry["data"].encode("ascii"), validate=True)
    return np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).astype(np.float64)


def _checksum(body):
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()


def save_checkpoint(model, path, extras=None, init=None):
    """Write a self-describing JSON checkpoint.

    Raw (unconstrained) parameter arrays are stored as little-endian float64
    in C order, base64 encoded; the model spec travels with them.
    """
    body = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "endianness": "little",
        "layout": "float64 C-order base64, unconstrained parameterisation",
        "spec": model.spec.to_dict(),
        "init": (init or InitRecipe()).to_dict(),
        "inducing_tasks": {
            name: unit.inducing_tasks.tolist() for name, unit in model.units() if unit.inducing_tasks is not None
        },
        "parameters": {k: _encode(p.unconstrained) for k, p in sorted(model.parameters().items())},
        "extras": extras or {},
    }
    body["checksum"] = _checksum(body)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_checkpoint(path, return_extras=False):
    """Rebuild a model from :func:`save_checkpoint` output (bitwise-equal raw parameters)."""
    try:
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: not a valid checkpoint ({exc})") from None
    if not isinstance(body, dict) or body.get("format") != CHECKPOINT_FORMAT:
        raise CorruptCheckpoint(f"{path}: not an mtdgp checkpoint")
    if body.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {body.get('version')}, expected {CHECKPOINT_VERSION}")
    stored = body.pop("checksum", None)
    if stored != _checksum(body):
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    if body.get("endianness") != "little":
        raise CorruptCheckpoint(f"{path}: unsupported endianness {body.get('endianness')!r}")
    try:
        spec = ModelSpec.from_dict(body["spec"])
        model = build_model(spec, InitRecipe.from_dict(body["init"]))
        for name, labels in body["inducing_tasks"].items():
            dict(model.units())[name].inducing_tasks = np.asarray(labels, dtype=np.int64)
        params = model.parameters()
        if set(params) != set(body["parameters"]):
            raise CorruptCheckpoint(f"{path}: parameter names do not match the stored spec")
        for name, entry in body["parameters"].items():
            params[name].unconstrained = _decode(entry)
    except CorruptCheckpoint:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: {exc}") from None
    if return_extras:
        return model, body.get("extras", {})
    return model
