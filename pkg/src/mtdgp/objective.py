"""Expected log-likelihoods and the (KL-weighted) multi-task ELBO.

The objective is

    sum_t sum_n E_q[log p(y_n^t | f^t)]
      - sum_t alpha_t KL(head_t) - sum_i beta_i KL(g_i) - sum_t sum_j gamma_tj KL(h_tj)

where the expectation is a Monte Carlo average over propagations through
the latent layer, and each head's output expectation is closed form
(Gaussian) or Gauss-Hermite quadrature (Bernoulli, logistic link). With all
weights equal to one this is the ordinary ELBO.

Monte Carlo noise is addressed by datapoint id, so a point gets the same
draw whether it appears in a small minibatch or in the full dataset.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .architecture import propagate
from .exceptions import EmptyBatch, InvalidNoise, ShapeMismatch, ValidationError
from .rng import RngStream
from .svgp import kl_to_prior

NOISE_FLOOR = 1e-12
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class KLWeights:
    """Per-unit KL multipliers; ``None`` entries default to 1.

    ``task_unit_weights[t][j]`` weighs the j-th task unit of task t.
    """

    head_weights: list = None
    shared_weights: list = None
    task_unit_weights: list = None

    def resolve(self, spec):
        """Fill defaults, check shapes and positivity against ``spec``."""
        heads = [1.0] * spec.tasks if self.head_weights is None else [float(a) for a in self.head_weights]
        n_shared = len(spec.shared_units) if spec.uses_shared else 0
        shared = [1.0] * n_shared if self.shared_weights is None else [float(b) for b in self.shared_weights]
        if self.task_unit_weights is None:
            task = [[1.0] * len(spec.task_dims(t)) for t in range(spec.tasks)]
        else:
            task = [[float(g) for g in row] for row in self.task_unit_weights]
        if len(heads) != spec.tasks:
            raise ValidationError(f"head_weights needs {spec.tasks} entries, got {len(heads)}")
        if len(shared) != n_shared:
            raise ValidationError(f"shared_weights needs {n_shared} entries, got {len(shared)}")
        if len(task) != spec.tasks or any(len(task[t]) != len(spec.task_dims(t)) for t in range(spec.tasks)):
            raise ValidationError("task_unit_weights must have one row per task and one entry per task unit")
        flat = heads + shared + [g for row in task for g in row]
        if any(not (w > 0 and np.isfinite(w)) for w in flat):
            raise ValidationError("KL weights must be finite and > 0")
        return KLWeights(heads, shared, task)

    def to_dict(self):
        return {"head_weights": self.head_weights, "shared_weights": self.shared_weights,
                "task_unit_weights": self.task_unit_weights}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("head_weights"), d.get("shared_weights"), d.get("task_unit_weights"))


@dataclass
class MonteCarloConfig:
    train_samples: int = 5
    eval_samples: int = 100
    quadrature_points: int = 20

    def __post_init__(self):
        for name in ("train_samples", "eval_samples", "quadrature_points"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be >= 1")
            setattr(self, name, int(getattr(self, name)))

    def to_dict(self):
        return {"train_samples": self.train_samples, "eval_samples": self.eval_samples,
                "quadrature_points": self.quadrature_points}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --------------------------------------------------------------- likelihoods


def _noise_value(noise):
    v = noise.value if isinstance(noise, tn.Tensor) else np.asarray(noise, dtype=np.float64)
    if np.any(~(v > NOISE_FLOOR)):
        raise InvalidNoise(f"likelihood variance must exceed {NOISE_FLOOR}, got {np.min(v)}")


def expected_loglik_gaussian(y, mean, variance, noise):
    """``E_{f ~ N(mean, variance)} log N(y | f, noise)``, elementwise."""
    _noise_value(noise)
    resid = tn.square(tn.as_tensor(y) - mean) + variance
    return -0.5 * (LOG_2PI + tn.log(noise)) - resid / (2.0 * noise)


def expected_loglik_bernoulli(y, mean, variance, nodes=20):
    """Gauss-Hermite estimate of ``E log sigma((2y - 1) f)`` for ``f ~ N(mean, variance)``."""
    if int(nodes) < 1:
        raise ValidationError("quadrature needs at least one node")
    x, w = np.polynomial.hermite.hermgauss(int(nodes))
    y = np.asarray(y.value if isinstance(y, tn.Tensor) else y, dtype=np.float64)
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValidationError("Bernoulli targets must be 0 or 1")
    sign = 2.0 * y - 1.0
    mean = tn.as_tensor(mean)
    sd = tn.sqrt(2.0 * tn.as_tensor(variance))
    shape = mean.shape
    # quadrature nodes on a new trailing axis
    f = mean.reshape(shape + (1,)) + sd.reshape(shape + (1,)) * x
    terms = tn.log_sigmoid(f * np.expand_dims(sign, -1))
    return (terms * (w / np.sqrt(np.pi))).sum(axis=-1)


def expected_loglik(model, task, y, mean, variance, mc):
    if model.spec.likelihood == "gaussian":
        return expected_loglik_gaussian(y, mean, variance, model.likelihood_variance()[task])
    return expected_loglik_bernoulli(y, mean, variance, mc.quadrature_points)


# ----------------------------------------------------------------- the ELBO


def _check_data(model, data):
    spec = model.spec
    if len(data) != spec.tasks:
        raise ShapeMismatch(f"model has {spec.tasks} tasks, data has {len(data)}")
    for t, d in enumerate(data):
        if d.inputs.shape[1] != spec.input_dim or d.outputs.shape[1] != spec.output_dim:
            raise ShapeMismatch(
                f"task {t}: data dims ({d.inputs.shape[1]}, {d.outputs.shape[1]}) "
                f"vs model ({spec.input_dim}, {spec.output_dim})"
            )


def task_loglik(model, dataset, task, index, mc, stream):
    """Per-point expected log-likelihood averaged over Monte Carlo samples (length |index|)."""
    x = dataset.inputs[index]
    y = dataset.outputs[index]
    means, variances = propagate(
        model, x, task, stream, mc_samples=mc.train_samples, point_ids=dataset.point_ids[index]
    )
    ell = expected_loglik(model, task, y, means, variances, mc)
    return ell.sum(axis=2).mean(axis=0)


def likelihood_terms(model, data, batch, full_counts, mc, stream):
    """Scaled per-task log-likelihood sums as a list (``None`` for excluded tasks).

    ``batch[t]`` indexes rows of ``data[t]``; its sum is scaled by
    ``full_counts[t] / len(batch[t])``.
    """
    _check_data(model, data)
    if len(batch) != model.spec.tasks or len(full_counts) != model.spec.tasks:
        raise ShapeMismatch("batch and full_counts need one entry per task")
    out = []
    for t, idx in enumerate(batch):
        if idx is None:
            out.append(None)
            continue
        idx = np.asarray(idx, dtype=np.int64).reshape(-1)
        if idx.size == 0:
            raise EmptyBatch(f"task {t} is in the batch but has no points")
        if idx.min() < 0 or idx.max() >= data[t].n:
            raise ValidationError(f"task {t}: batch index outside [0, {data[t].n})")
        if full_counts[t] < idx.size:
            raise ValidationError(f"task {t}: full count {full_counts[t]} smaller than batch size {idx.size}")
        scale = float(full_counts[t]) / idx.size
        out.append(task_loglik(model, data[t], t, idx, mc, stream).sum() * scale)
    return out


def kl_term(model, weights=None):
    """Weighted sum of every unit's KL to its prior; ``weights=None`` is the unweighted sum."""
    spec = model.spec
    w = None if weights is None else weights.resolve(spec)
    total = tn.Tensor(0.0)
    if model.coregional_head:
        kl = kl_to_prior(model.heads[0])
        total = total + (kl if w is None else kl * float(np.mean(w.head_weights)))
    else:
        for t, head in enumerate(model.heads):
            kl = kl_to_prior(head)
            total = total + (kl if w is None else kl * w.head_weights[t])
    if spec.uses_shared:
        for i, unit in enumerate(model.shared):
            kl = kl_to_prior(unit)
            total = total + (kl if w is None else kl * w.shared_weights[i])
    for t, units in enumerate(model.task_units):
        for j, unit in enumerate(units):
            kl = kl_to_prior(unit)
            total = total + (kl if w is None else kl * w.task_unit_weights[t][j])
    return total


def minibatch_elbo(model, data, batch, full_counts, weights=None, mc=None, stream=None):
    """ELBO estimate from per-task index subsets with likelihood sums rescaled."""
    mc = mc or MonteCarloConfig()
    stream = stream if stream is not None else RngStream(0)
    total = tn.Tensor(0.0)
    for term in likelihood_terms(model, data, batch, full_counts, mc, stream):
        if term is not None:
            total = total + term
    return total - kl_term(model, weights)


def full_batch(data):
    return [np.arange(d.n) for d in data], [d.n for d in data]


def elbo(model, data, weights=None, mc=None, stream=None):
    """Full-data ELBO; a tensor, differentiable in every trainable parameter."""
    batch, counts = full_batch(data)
    return minibatch_elbo(model, data, batch, counts, weights, mc, stream)
