"""Covariance functions.

Kernels own their parameters and evaluate to :class:`~mtdgp.tensor.Tensor`
graphs. ARD weights are inverse squared lengthscales, one per input column.
A kernel's optional white-noise variance is added only when both arguments
are the same matrix, which is how inter-layer noise enters an inner layer.
"""

import numpy as np

from . import tensor as tn
from .exceptions import DimensionMismatch, TaskIndexOutOfRange, ValidationError
from .tensor import POSITIVE, UNCONSTRAINED, Parameter


def lengthscale_to_weight(lengthscale):
    return 1.0 / np.square(np.asarray(lengthscale, dtype=np.float64))


def weight_to_lengthscale(weight):
    return 1.0 / np.sqrt(np.asarray(weight, dtype=np.float64))


class Matern52:
    """Matern-5/2 kernel with ARD weighting.

    Parameters
    ----------
    input_dim : int
    variance : float
        Signal variance.
    lengthscales, ard_weights : float or array, optional
        Give one or the other; ``ard_weights = 1 / lengthscales**2``.
    noise : float
        White-noise variance added on ``K(X, X)``. Zero disables it.
    train_noise, train_variance : bool
    """

    def __init__(
        self,
        input_dim,
        variance=1.0,
        lengthscales=None,
        ard_weights=None,
        noise=0.0,
        train_noise=False,
        train_variance=True,
    ):
        self.input_dim = int(input_dim)
        if ard_weights is None:
            ls = 1.0 if lengthscales is None else lengthscales
            ard_weights = lengthscale_to_weight(ls)
        elif lengthscales is not None:
            raise ValidationError("give lengthscales or ard_weights, not both")
        w = np.broadcast_to(np.asarray(ard_weights, dtype=np.float64), (self.input_dim,)).copy()
        self.signal_variance = Parameter(variance, POSITIVE, trainable=train_variance)
        self.ard_weights = Parameter(w, POSITIVE)
        self.noise = Parameter(noise, POSITIVE, trainable=train_noise) if (noise > 0 or train_noise) else None

    def parameters(self):
        out = {"variance": self.signal_variance, "ard_weights": self.ard_weights}
        if self.noise is not None:
            out["noise"] = self.noise
        return out

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"kernel expects {self.input_dim} input columns, got shape {x.shape}")

    def K(self, x, x2=None, tasks=None, tasks2=None):
        return matern52_ard(self, x, x2)

    def Kdiag(self, x, tasks=None):
        x = tn.as_tensor(x)
        self._check(x)
        ones = np.ones(x.shape[0])
        out = self.signal_variance() * ones
        if self.noise is not None:
            out = out + self.noise() * ones
        return out


def matern52_ard(kernel, x_left, x_right=None):
    """``K[n, m] = s2 * (1 + sqrt5 r + 5 r^2 / 3) exp(-sqrt5 r)``, r the ARD distance.

    White noise is added when ``x_right`` is omitted or is ``x_left`` itself.
    """
    same = x_right is None or x_right is x_left
    x_left = tn.as_tensor(x_left)
    x_right = x_left if same else tn.as_tensor(x_right)
    kernel._check(x_left)
    kernel._check(x_right)
    d2 = tn.weighted_sqdist(x_left, x_right, kernel.ard_weights())
    k = kernel.signal_variance() * tn.matern52_profile(d2)
    if same and kernel.noise is not None:
        k = k + kernel.noise() * np.eye(x_left.shape[0])
    return k


class Linear:
    """``K[n, m] = variance * <x_n, x'_m>``."""

    def __init__(self, input_dim, variance=1.0, noise=0.0, train_noise=False):
        self.input_dim = int(input_dim)
        self.signal_variance = Parameter(variance, POSITIVE)
        self.noise = Parameter(noise, POSITIVE, trainable=train_noise) if (noise > 0 or train_noise) else None

    def parameters(self):
        out = {"variance": self.signal_variance}
        if self.noise is not None:
            out["noise"] = self.noise
        return out

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"kernel expects {self.input_dim} input columns, got shape {x.shape}")

    def K(self, x, x2=None, tasks=None, tasks2=None):
        same = x2 is None or x2 is x
        x = tn.as_tensor(x)
        x2 = x if same else tn.as_tensor(x2)
        self._check(x)
        self._check(x2)
        k = self.signal_variance() * (x @ x2.T)
        if same and self.noise is not None:
            k = k + self.noise() * np.eye(x.shape[0])
        return k

    def Kdiag(self, x, tasks=None):
        x = tn.as_tensor(x)
        self._check(x)
        out = self.signal_variance() * tn.square(x).sum(axis=1)
        if self.noise is not None:
            out = out + self.noise() * np.ones(x.shape[0])
        return out


class CoregionalParams:
    """ICM task covariance ``B = W W^T + diag(kappa)``."""

    def __init__(self, mixing, task_diag):
        mixing = np.atleast_2d(np.asarray(mixing, dtype=np.float64))
        task_diag = np.asarray(task_diag, dtype=np.float64).reshape(-1)
        if task_diag.shape[0] != mixing.shape[0]:
            raise ValidationError("mixing rows and task_diag length must both equal the task count")
        self.mixing = Parameter(mixing, UNCONSTRAINED)
        self.task_diag = Parameter(task_diag, POSITIVE)

    @property
    def num_tasks(self):
        return self.mixing.shape[0]

    def parameters(self):
        return {"mixing": self.mixing, "task_diag": self.task_diag}

    def B(self):
        w = self.mixing()
        t = self.num_tasks
        # elementwise products keep B exactly symmetric
        outer = (w.reshape(t, 1, -1) * w.reshape(1, t, -1)).sum(axis=2)
        return outer + tn.diag_embed(self.task_diag())

    def task_matrix(self):
        return self.B().value


def _task_index(tasks, num_tasks):
    idx = np.asarray(tasks)
    if idx.ndim != 1 or not np.issubdtype(idx.dtype, np.integer):
        raise TaskIndexOutOfRange("task indices must be a 1-D integer array")
    if idx.size and (idx.min() < 0 or idx.max() >= num_tasks):
        raise TaskIndexOutOfRange(f"task index outside [0, {num_tasks})")
    return idx


def coregional(core, base_k, tasks_left, tasks_right):
    """``K[n, m] = B[t_n, t'_m] * base_k[n, m]``."""
    base_k = tn.as_tensor(base_k)
    tl = _task_index(tasks_left, core.num_tasks)
    tr = _task_index(tasks_right, core.num_tasks)
    if base_k.shape != (tl.size, tr.size):
        raise DimensionMismatch(f"base kernel shape {base_k.shape} vs tasks ({tl.size}, {tr.size})")
    return core.B()[tl[:, None], tr[None, :]] * base_k


class Coregionalized:
    """A base kernel over inputs times the ICM task covariance.

    The base kernel's signal variance is held fixed (at 1 by default) since
    ``B`` already carries the scale.
    """

    def __init__(self, base, core):
        self.base = base
        self.core = core
        self.input_dim = base.input_dim
        self.base.signal_variance.trainable = False

    def parameters(self):
        out = {f"base.{k}": v for k, v in self.base.parameters().items()}
        out.update({f"core.{k}": v for k, v in self.core.parameters().items()})
        return out

    def K(self, x, x2=None, tasks=None, tasks2=None):
        if tasks is None:
            raise ValidationError("coregionalized kernel needs task indices")
        same = x2 is None or x2 is x
        base = self.base.K(x, None if same else x2)
        return coregional(self.core, base, tasks, tasks if same else tasks2)

    def Kdiag(self, x, tasks=None):
        if tasks is None:
            raise ValidationError("coregionalized kernel needs task indices")
        idx = _task_index(tasks, self.core.num_tasks)
        return tn.diag_part(self.core.B())[idx] * self.base.Kdiag(x)
