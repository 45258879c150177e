"""Sparse variational GP units.

A unit is one latent function with M inducing inputs ``Z`` and a free-form
Gaussian ``q(U) = N(q_mu, S_p)`` per output dimension ``p``, parameterised
directly over the inducing values (no whitening). Everything downstream,
inner layers and heads alike, is built from :func:`conditional_marginals`,
:func:`kl_to_prior` and :func:`sample_outputs`.
"""

import numpy as np

from . import tensor as tn
from .exceptions import DimensionMismatch, ValidationError
from .rng import draw_standard_normal
from .tensor import LOWER_TRIANGULAR, Parameter

DEFAULT_JITTER = 1e-8
VARIANCE_FLOOR = 1e-12


class ZeroMean:
    def __init__(self, output_dim):
        self.output_dim = int(output_dim)

    def __call__(self, x):
        return tn.Tensor(np.zeros((x.shape[0], self.output_dim)))

    def to_dict(self):
        return {"type": "zero", "output_dim": self.output_dim}


class LinearMean:
    """Fixed affine map ``x @ A + b``; not trained."""

    def __init__(self, A, b=None):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.b = np.zeros(self.A.shape[1]) if b is None else np.asarray(b, dtype=np.float64)
        self.output_dim = self.A.shape[1]

    def __call__(self, x):
        return tn.as_tensor(x) @ self.A + self.b

    def to_dict(self):
        return {"type": "linear", "A": self.A.tolist(), "b": self.b.tolist()}


def identity_projection(input_dim, output_dim):
    """Identity from ``input_dim`` to ``output_dim`` columns, zero-padded or truncated."""
    return np.eye(input_dim, output_dim)


class SparseGPUnit:
    """One sparse variational GP.

    ``inducing_tasks`` is only used with coregionalised kernels, where every
    inducing input carries a (fixed) task label.
    """

    def __init__(
        self,
        kernel,
        inducing,
        output_dim,
        mean_fn=None,
        inducing_tasks=None,
        jitter=DEFAULT_JITTER,
        name="unit",
    ):
        inducing = np.atleast_2d(np.asarray(inducing, dtype=np.float64))
        if inducing.shape[1] != kernel.input_dim:
            raise DimensionMismatch(
                f"{name}: inducing inputs have {inducing.shape[1]} columns, kernel expects {kernel.input_dim}"
            )
        m = inducing.shape[0]
        self.name = name
        self.kernel = kernel
        self.output_dim = int(output_dim)
        self.mean_fn = mean_fn if mean_fn is not None else ZeroMean(output_dim)
        if self.mean_fn.output_dim != self.output_dim:
            raise DimensionMismatch(f"{name}: mean function output dim != {self.output_dim}")
        self.inducing_tasks = None if inducing_tasks is None else np.asarray(inducing_tasks, dtype=np.int64)
        if self.inducing_tasks is not None and self.inducing_tasks.shape != (m,):
            raise DimensionMismatch(f"{name}: need one task label per inducing input")
        self.jitter = float(jitter)
        self.inducing = Parameter(inducing, name=f"{name}.inducing")
        self.q_mu = Parameter(np.zeros((m, self.output_dim)), name=f"{name}.q_mu")
        self.q_sqrt = Parameter(
            np.tile(np.eye(m), (self.output_dim, 1, 1)), LOWER_TRIANGULAR, name=f"{name}.q_sqrt"
        )
        self.clamp_count = 0

    @property
    def num_inducing(self):
        return self.inducing.shape[0]

    @property
    def input_dim(self):
        return self.kernel.input_dim

    def parameters(self):
        out = {f"kernel.{k}": v for k, v in self.kernel.parameters().items()}
        out["inducing"] = self.inducing
        out["q_mu"] = self.q_mu
        out["q_sqrt"] = self.q_sqrt
        return out

    def prior_cov(self):
        z = self.inducing()
        return self.kernel.K(z, None, self.inducing_tasks)

    def prior_mean(self):
        return self.mean_fn(self.inducing())

    def set_posterior_to_prior(self):
        """q(U) := p(U), i.e. q_mu = m(Z) and S = K_zz for every output dim."""
        kzz = self.prior_cov().value
        chol = tn.cholesky(kzz, self.jitter).value
        self.q_mu.assign(self.prior_mean().value)
        self.q_sqrt.assign(np.tile(chol, (self.output_dim, 1, 1)))

    def set_posterior_small(self, scale=1e-5, mean=0.0):
        """q_mu = mean, S = scale * I."""
        m = self.num_inducing
        self.q_mu.assign(np.full((m, self.output_dim), float(mean)))
        self.q_sqrt.assign(np.tile(np.sqrt(scale) * np.eye(m), (self.output_dim, 1, 1)))


def _check_inputs(unit, inputs, tasks):
    if inputs.ndim != 2 or inputs.shape[1] != unit.input_dim:
        raise DimensionMismatch(f"{unit.name}: expected inputs with {unit.input_dim} columns, got {inputs.shape}")
    if (tasks is None) != (unit.inducing_tasks is None):
        raise ValidationError(f"{unit.name}: task labels must be given exactly when the kernel is coregionalised")


def conditional_marginals(unit, inputs, tasks=None):
    """Per-point mean and variance of ``q(f(x_n))`` with ``U`` integrated out.

    Returns two N x P tensors. Variances below 1e-12 are clamped and counted
    in ``unit.clamp_count``.
    """
    x = tn.as_tensor(inputs)
    _check_inputs(unit, x, tasks)
    z = unit.inducing()
    kzz = unit.kernel.K(z, None, unit.inducing_tasks)
    lk = tn.cholesky(kzz, unit.jitter)
    kzx = unit.kernel.K(z, x, unit.inducing_tasks, tasks)
    a = tn.solve_triangular(lk, kzx, lower=True)
    alpha = tn.solve_triangular(lk, a, lower=True, trans=True)

    resid = unit.q_mu() - unit.mean_fn(z)
    mean = unit.mean_fn(x) + alpha.T @ resid

    lq = unit.q_sqrt()
    lqa = tn.swap_last(lq) @ alpha
    prior_var = unit.kernel.Kdiag(x, tasks) - tn.square(a).sum(axis=0)
    post_var = tn.square(lqa).sum(axis=1).T
    var = post_var + prior_var.reshape(-1, 1)

    clamped = int(np.count_nonzero(var.value < VARIANCE_FLOOR))
    if clamped:
        unit.clamp_count += clamped
        var = tn.maximum(var, VARIANCE_FLOOR)
    return mean, var


def kl_to_prior(unit):
    """Sum over output dims of KL[N(q_mu, S) || N(m(Z), K_zz)], closed form."""
    z = unit.inducing()
    kzz = unit.kernel.K(z, None, unit.inducing_tasks)
    lk = tn.cholesky(kzz, unit.jitter)
    m, p = unit.num_inducing, unit.output_dim
    lq = unit.q_sqrt()
    resid = unit.q_mu() - unit.mean_fn(z)

    flat = tn.transpose(lq, (1, 0, 2)).reshape(m, p * m)
    trace = tn.square(tn.solve_triangular(lk, flat, lower=True)).sum()
    maha = tn.square(tn.solve_triangular(lk, resid, lower=True)).sum()
    logdet_k = 2.0 * tn.log(tn.diag_part(lk)).sum()
    logdet_s = 2.0 * tn.log(tn.diag_part(lq)).sum()
    return 0.5 * (trace + maha - m * p + p * logdet_k - logdet_s)


def reparameterize(mean, var, eps):
    """``mean + sqrt(var) * eps``, differentiable in mean and var."""
    return mean + tn.sqrt(var) * eps


def unit_noise(stream, point_ids, output_dim):
    """Standard normals for the given datapoints, one row per id."""
    ids = np.asarray(point_ids, dtype=np.uint64).reshape(-1, 1)
    cols = np.arange(output_dim, dtype=np.uint64).reshape(1, -1)
    return stream.normal_at(ids * np.uint64(output_dim) + cols)


def sample_outputs(unit, inputs, stream, tasks=None, point_ids=None, zero_noise=False):
    """One reparameterised draw per input row from the per-point marginals.

    With ``point_ids`` the noise is addressed by datapoint identity; without,
    it is read sequentially from ``stream``. ``zero_noise`` is a test hook
    returning the conditional means.
    """
    mean, var = conditional_marginals(unit, inputs, tasks)
    n, p = mean.shape
    if zero_noise:
        return mean
    if point_ids is None:
        eps = draw_standard_normal(stream, n, p)
    else:
        eps = unit_noise(stream, point_ids, p)
    return reparameterize(mean, var, eps)
