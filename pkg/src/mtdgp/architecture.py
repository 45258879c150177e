"""Two-layer multi-task architectures and their single-layer baselines.

Variants
--------
mMDGP  shared latent units plus task-specific units, concatenated and warped
       by a per-task ARD head.
sMDGP  shared latent units only, per-task ARD heads.
cMDGP  shared latent units, linearly mixed per task, fed to one
       coregionalised head over task-labelled inputs.
iDGP   task-specific latent units only (independent two-layer DGPs).
iGP    one sparse GP per task over the raw inputs.
cGP    one coregionalised (ICM) sparse GP over the raw inputs.

A task's head input is the concatenation of shared-unit outputs (in
declaration order) followed by its task-unit outputs.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from . import tensor as tn
from .exceptions import DimensionMismatch, InvalidSpec, TaskIndexOutOfRange, UnsupportedVariant
from .kernels import CoregionalParams, Coregionalized, Matern52, lengthscale_to_weight
from .svgp import (
    LinearMean,
    SparseGPUnit,
    ZeroMean,
    conditional_marginals,
    identity_projection,
    unit_noise,
)
from .tensor import POSITIVE, Parameter

VARIANTS = ("mMDGP", "sMDGP", "cMDGP", "iDGP", "iGP", "cGP")
DEEP_VARIANTS = ("mMDGP", "sMDGP", "cMDGP", "iDGP")
ARD_VARIANTS = ("mMDGP", "sMDGP", "iDGP")
LIKELIHOODS = ("gaussian", "bernoulli")

_SHARED_KEY = 1_000_000
_TASK_KEY = 2_000_000


@dataclass
class ModelSpec:
    variant: str
    tasks: int
    input_dim: int
    output_dim: int = 1
    shared_units: list = field(default_factory=list)
    task_units: list = field(default_factory=list)
    inducing_count: int = 50
    coregional_rank: int = 1
    likelihood: str = "gaussian"

    def __post_init__(self):
        self.shared_units = [int(d) for d in self.shared_units]
        tu = list(self.task_units)
        if tu and all(isinstance(d, (int, np.integer)) for d in tu):
            tu = [list(tu) for _ in range(self.tasks)]
        self.task_units = [[int(d) for d in dims] for dims in tu]

    @property
    def is_deep(self):
        return self.variant in DEEP_VARIANTS

    @property
    def uses_shared(self):
        return self.variant in ("mMDGP", "sMDGP", "cMDGP")

    @property
    def uses_task_units(self):
        return self.variant in ("mMDGP", "iDGP")

    def task_dims(self, t):
        return self.task_units[t] if self.uses_task_units else []

    def head_input_dim(self, t):
        if not self.is_deep:
            return self.input_dim
        shared = sum(self.shared_units) if self.uses_shared else 0
        return shared + sum(self.task_dims(t))

    def validate(self):
        problems = []
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {', '.join(VARIANTS)}, got {self.variant!r}")
        if self.tasks < 1:
            problems.append("tasks must be >= 1")
        if self.input_dim < 1 or self.output_dim < 1:
            problems.append("input_dim and output_dim must be >= 1")
        if self.inducing_count < 1:
            problems.append("inducing_count must be >= 1")
        if self.likelihood not in LIKELIHOODS:
            problems.append(f"likelihood must be one of {LIKELIHOODS}")
        if self.likelihood == "bernoulli" and self.output_dim != 1:
            problems.append("bernoulli likelihood needs output_dim == 1")
        if any(d < 1 for d in self.shared_units) or any(d < 1 for dims in self.task_units for d in dims):
            problems.append("latent unit dimensions must be >= 1")
        has_task_units = any(len(dims) for dims in self.task_units)
        if self.variant == "sMDGP":
            if has_task_units:
                problems.append("sMDGP has no task-specific units; task_units must be empty")
            if not self.shared_units:
                problems.append("sMDGP needs at least one shared unit")
        elif self.variant == "cMDGP":
            if has_task_units:
                problems.append("cMDGP has no task-specific units; task_units must be empty")
            if not self.shared_units:
                problems.append("cMDGP needs at least one shared unit")
        elif self.variant in ("mMDGP", "iDGP"):
            if self.variant == "mMDGP" and not self.shared_units:
                problems.append("mMDGP needs at least one shared unit")
            if len(self.task_units) != self.tasks or any(len(d) < 1 for d in self.task_units):
                problems.append(f"{self.variant} needs at least one task unit for each of the {self.tasks} tasks")
        if self.variant in ("cMDGP", "cGP") and self.coregional_rank < 1:
            problems.append("coregional_rank must be >= 1")
        if problems:
            raise InvalidSpec("; ".join(problems))
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class KernelInit:
    """Initial Matern-5/2 settings; a lengthscale ``l`` becomes weight ``1/l^2``."""

    lengthscale: float = 1.0
    variance: float = 1.0
    ard_weight: float = None

    @property
    def weight(self):
        if self.ard_weight is not None:
            return float(self.ard_weight)
        return float(lengthscale_to_weight(self.lengthscale))


@dataclass
class InitRecipe:
    shared: KernelInit = field(default_factory=lambda: KernelInit(10.0, 1.0))
    task: KernelInit = field(default_factory=lambda: KernelInit(10.0, 0.5))
    head: KernelInit = field(default_factory=lambda: KernelInit(10.0, 1.0))
    likelihood_variance: float = 1e-6
    inner_noise: float = 1e-6
    inducing: str = "random"
    kmeans_subsample: int = 2000
    top_posterior_scale: float = 1e-5

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("shared", "task", "head"):
            if key in d and isinstance(d[key], dict):
                d[key] = KernelInit(**d[key])
        return cls(**d)


RECIPES = {
    "sarcos": InitRecipe(),
    "toy": InitRecipe(
        shared=KernelInit(0.5, 1.0),
        task=KernelInit(1.0, 0.5),
        head=KernelInit(1.0, 1.0),
        likelihood_variance=0.01,
        inducing="kmeans",
    ),
    "mnist": InitRecipe(
        shared=KernelInit(40.0, 30.0),
        task=KernelInit(20.0, 60.0),
        head=KernelInit(20.0, 30.0),
        inducing="kmeans",
    ),
    "faims": InitRecipe(
        shared=KernelInit(0.5, 1.5),
        task=KernelInit(1.5, 1.5),
        head=KernelInit(1.0, 2.0),
        inducing="kmeans",
    ),
}


class Model:
    """An assembled multi-task model. Build with :func:`build_model`."""

    def __init__(self, spec):
        self.spec = spec
        self.shared = []
        self.task_units = [[] for _ in range(spec.tasks)]
        self.heads = []
        self.mixing = []
        self.likelihood_variance = None

    @property
    def coregional_head(self):
        return self.spec.variant in ("cMDGP", "cGP")

    def head(self, t):
        return self.heads[0] if self.coregional_head else self.heads[t]

    def inner_units(self, t):
        """(key, unit) pairs feeding task ``t``'s head, in column order."""
        out = []
        if self.spec.uses_shared:
            out += [(_SHARED_KEY + i, u) for i, u in enumerate(self.shared)]
        out += [(_TASK_KEY + 1000 * t + j, u) for j, u in enumerate(self.task_units[t])]
        return out

    def units(self):
        """(name, unit) for every unit."""
        out = [(f"shared.{i}", u) for i, u in enumerate(self.shared)]
        for t, units in enumerate(self.task_units):
            out += [(f"task.{t}.{j}", u) for j, u in enumerate(units)]
        if self.coregional_head:
            out.append(("head", self.heads[0]))
        else:
            out += [(f"head.{t}", u) for t, u in enumerate(self.heads)]
        return out

    def parameters(self):
        out = {}
        for prefix, unit in self.units():
            for name, p in unit.parameters().items():
                out[f"{prefix}.{name}"] = p
        for t, p in enumerate(self.mixing):
            out[f"mixing.{t}"] = p
        if self.likelihood_variance is not None:
            out["likelihood.variance"] = self.likelihood_variance
        for name, p in out.items():
            p.name = name
        return out

    def clamp_count(self):
        return sum(u.clamp_count for _, u in self.units())


# ------------------------------------------------------------------ building


def _select_inducing(x, m, method, rng, subsample):
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        return rng.standard_normal((m, x.shape[1]))
    if n < m:
        extra = x[rng.integers(0, n, m - n)]
        scale = 1e-3 * (x.std(axis=0) + 1e-3)
        return np.vstack([x, extra + scale * rng.standard_normal(extra.shape)])
    if method == "kmeans":
        if n > subsample:
            x = x[rng.choice(n, subsample, replace=False)]
        if np.unique(x, axis=0).shape[0] >= m:
            km = KMeans(n_clusters=m, n_init=3, random_state=int(rng.integers(2**31 - 1)))
            return km.fit(x).cluster_centers_
    return x[rng.choice(x.shape[0], m, replace=False)].copy()


def _allocate(spec, recipe, task_inputs, rng):
    """Create every unit with its initial hyperparameters and inducing inputs."""
    model = Model(spec)
    m = spec.inducing_count
    pooled = np.vstack(task_inputs)
    centroids = [
        _select_inducing(task_inputs[t], m, recipe.inducing, rng, recipe.kmeans_subsample) for t in range(spec.tasks)
    ]

    def inner(dim, kinit, z):
        kern = Matern52(
            spec.input_dim,
            variance=kinit.variance,
            ard_weights=kinit.weight,
            noise=recipe.inner_noise,
            train_noise=True,
        )
        return SparseGPUnit(kern, z, dim, LinearMean(identity_projection(spec.input_dim, dim)))

    if spec.is_deep:
        if spec.uses_shared:
            for i, dim in enumerate(spec.shared_units):
                z = _select_inducing(pooled, m, recipe.inducing, rng, recipe.kmeans_subsample)
                model.shared.append(inner(dim, recipe.shared, z))
        for t in range(spec.tasks):
            for dim in spec.task_dims(t):
                model.task_units[t].append(inner(dim, recipe.task, centroids[t]))
    return model, centroids


def _name_units(model):
    for name, unit in model.units():
        unit.name = name


def build_model(spec, init=None, stream=None, data=None):
    """Assemble and initialise a model.

    ``data`` is a list of per-task datasets (anything with an ``inputs``
    attribute); inducing inputs are chosen from it by k-means or random row
    sampling according to ``init.inducing``. Without data they are drawn
    from a standard normal.
    """
    from .rng import RngStream

    spec.validate()
    recipe = init or InitRecipe()
    stream = stream or RngStream(0)
    rng = np.random.default_rng([stream.seed, stream.stream_id, stream.counter])
    if data is None:
        task_inputs = [rng.standard_normal((spec.inducing_count, spec.input_dim)) for _ in range(spec.tasks)]
    else:
        if len(data) != spec.tasks:
            raise InvalidSpec(f"spec declares {spec.tasks} tasks, data has {len(data)}")
        task_inputs = [np.asarray(d.inputs, dtype=np.float64) for d in data]
        for t, x in enumerate(task_inputs):
            if x.ndim != 2 or x.shape[1] != spec.input_dim:
                raise InvalidSpec(f"task {t}: inputs have shape {x.shape}, spec input_dim={spec.input_dim}")

    model, centroids = _allocate(spec, recipe, task_inputs, rng)
    for unit in model.shared + [u for units in model.task_units for u in units]:
        unit.set_posterior_to_prior()

    d_out = spec.output_dim
    head_k = recipe.head if spec.is_deep else recipe.shared

    def latent_means(t, z):
        cols = [conditional_marginals(u, z)[0].value for _, u in model.inner_units(t)]
        return np.hstack(cols)

    if spec.variant in ("mMDGP", "sMDGP", "iDGP", "iGP"):
        for t in range(spec.tasks):
            z = latent_means(t, centroids[t]) if spec.is_deep else centroids[t]
            kern = Matern52(spec.head_input_dim(t), variance=head_k.variance, ard_weights=head_k.weight)
            model.heads.append(SparseGPUnit(kern, z, d_out, ZeroMean(d_out)))
    else:
        r = spec.coregional_rank
        if spec.variant == "cMDGP":
            d = sum(spec.shared_units)
            model.mixing = [Parameter(np.eye(d)) for _ in range(spec.tasks)]
            z = np.vstack([latent_means(t, centroids[t]) for t in range(spec.tasks)])
        else:
            d = spec.input_dim
            z = np.vstack(centroids)
        labels = np.repeat(np.arange(spec.tasks), [c.shape[0] for c in centroids])
        v = head_k.variance
        core = CoregionalParams(np.full((spec.tasks, r), np.sqrt(0.5 * v / r)), np.full(spec.tasks, 0.5 * v))
        kern = Coregionalized(Matern52(d, variance=1.0, ard_weights=head_k.weight), core)
        model.heads.append(SparseGPUnit(kern, z, d_out, ZeroMean(d_out), inducing_tasks=labels))

    for unit in model.heads:
        unit.set_posterior_small(recipe.top_posterior_scale)
    if spec.likelihood == "gaussian":
        model.likelihood_variance = Parameter(np.full(spec.tasks, recipe.likelihood_variance), POSITIVE)
    _name_units(model)
    model.parameters()
    return model


# --------------------------------------------------------------- propagation


def _check_task(model, task):
    if not 0 <= int(task) < model.spec.tasks:
        raise TaskIndexOutOfRange(f"task {task} outside [0, {model.spec.tasks})")
    return int(task)


def _head_marginals(model, task, lam):
    head = model.head(task)
    if model.spec.variant == "cMDGP":
        lam = lam @ model.mixing[task]()
    tasks = np.full(lam.shape[0], task, dtype=np.int64) if model.coregional_head else None
    return conditional_marginals(head, lam, tasks)


def propagate(model, inputs, task, stream, mc_samples=1, point_ids=None, deterministic=False):
    """Head marginals for ``inputs`` of ``task``, one set per Monte Carlo sample.

    Returns ``(means, variances)`` tensors shaped S x N x D_out. Sample ``s``
    is driven by ``stream.split(S)[s]``, and within it each latent unit reads
    noise addressed by ``point_ids`` (default ``0..N-1``). Single-layer
    variants return S = 1. ``deterministic`` feeds latent means forward
    instead of samples (a test hook).
    """
    task = _check_task(model, task)
    x = tn.as_tensor(inputs)
    if x.ndim != 2 or x.shape[1] != model.spec.input_dim:
        raise DimensionMismatch(f"inputs must have {model.spec.input_dim} columns, got shape {x.shape}")
    if not np.all(np.isfinite(x.value)):
        raise DimensionMismatch("inputs contain non-finite values")
    n = x.shape[0]
    d_out = model.spec.output_dim

    if not model.spec.is_deep:
        mean, var = _head_marginals(model, task, x)
        return mean.reshape(1, n, d_out), var.reshape(1, n, d_out)

    s_count = int(mc_samples)
    ids = np.arange(n) if point_ids is None else np.asarray(point_ids)
    subs = stream.split(s_count)
    columns = []
    for key, unit in model.inner_units(task):
        mean, var = conditional_marginals(unit, x)
        if deterministic:
            columns.append(tn.concatenate([mean] * s_count, axis=0))
            continue
        eps = np.vstack([unit_noise(sub.child(key).child(task), ids, unit.output_dim) for sub in subs])
        tiled_mean = tn.concatenate([mean] * s_count, axis=0)
        tiled_sd = tn.concatenate([tn.sqrt(var)] * s_count, axis=0)
        columns.append(tiled_mean + tiled_sd * eps)
    lam = tn.concatenate(columns, axis=1)
    mean, var = _head_marginals(model, task, lam)
    return mean.reshape(s_count, n, d_out), var.reshape(s_count, n, d_out)


def propagate_sample(model, inputs, task, sample_stream, point_ids=None):
    """A single Monte Carlo sample driven directly by ``sample_stream``."""
    task = _check_task(model, task)
    x = tn.as_tensor(inputs)
    n = x.shape[0]
    if not model.spec.is_deep:
        mean, var = _head_marginals(model, task, x)
        return mean, var
    ids = np.arange(n) if point_ids is None else np.asarray(point_ids)
    columns = []
    for key, unit in model.inner_units(task):
        mean, var = conditional_marginals(unit, x)
        eps = unit_noise(sample_stream.child(key).child(task), ids, unit.output_dim)
        columns.append(mean + tn.sqrt(var) * eps)
    return _head_marginals(model, task, tn.concatenate(columns, axis=1))


# ---------------------------------------------------------------- ARD report


def ard_report(model):
    """Per-task head ARD weights labelled by the latent column they weigh.

    Returns ``{task: [{"unit", "dim", "weight", "provenance"}, ...]}`` in
    head-input column order.
    """
    spec = model.spec
    if spec.variant not in ARD_VARIANTS:
        raise UnsupportedVariant(f"{spec.variant} has no per-task ARD head")
    report = {}
    for t in range(spec.tasks):
        weights = model.heads[t].kernel.ard_weights.value
        rows = []
        labels = []
        if spec.uses_shared:
            labels += [(f"G{i}", d, "shared") for i, d in enumerate(spec.shared_units)]
        labels += [(f"H{j}", d, "task-specific") for j, d in enumerate(spec.task_dims(t))]
        col = 0
        for unit, dim, prov in labels:
            for k in range(dim):
                rows.append({"unit": unit, "dim": k, "weight": float(weights[col]), "provenance": prov})
                col += 1
        report[t] = rows
    return report
