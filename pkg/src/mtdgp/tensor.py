"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps a float64 array and remembers, for every input that
needs a gradient, a vector-Jacobian product closure. Graphs are rebuilt on
every evaluation and consumed once by :func:`backward`; nodes are matrices
(or small stacks of matrices), never scalars, so an ELBO evaluation records
only a few hundred nodes.

Trainable quantities live in :class:`Parameter` objects, which store an
unconstrained array and expose the constrained view as a differentiable
expression.
"""

import logging

import numpy as np
from scipy import linalg as sla
from scipy.special import expit

from .exceptions import NonFiniteGradient, NotPositiveDefinite, ValidationError

logger = logging.getLogger(__name__)

JITTER_LADDER = (1e-8, 1e-6, 1e-4)


class Tensor:
    __slots__ = ("value", "parents", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, value, parents=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.requires_grad = requires_grad or bool(parents)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return swap_last(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.value)

    def __float__(self):
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _node(value, *edges):
    return Tensor(value, tuple((t, f) for t, f in edges if t.requires_grad))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    )


def neg(a):
    return _node(-a.value, (a, lambda g: -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(
        av * bv,
        (a, lambda g: _unbroadcast(g * bv, a.shape)),
        (b, lambda g: _unbroadcast(g * av, b.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _node(
        out,
        (a, lambda g: _unbroadcast(g / bv, a.shape)),
        (b, lambda g: _unbroadcast(-g * out / bv, b.shape)),
    )


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    av = a.value
    return _node(av**p, (a, lambda g: g * p * av ** (p - 1.0)))


def square(a):
    a = as_tensor(a)
    av = a.value
    return _node(av * av, (a, lambda g: 2.0 * g * av))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a, lambda g: g * out))


def log(a):
    a = as_tensor(a)
    av = a.value
    return _node(np.log(av), (a, lambda g: g / av))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a, lambda g: 0.5 * g / out))


def sin(a):
    a = as_tensor(a)
    av = a.value
    return _node(np.sin(av), (a, lambda g: g * np.cos(av)))


def cos(a):
    a = as_tensor(a)
    av = a.value
    return _node(np.cos(av), (a, lambda g: -g * np.sin(av)))


def softplus(a):
    a = as_tensor(a)
    av = a.value
    return _node(np.logaddexp(0.0, av), (a, lambda g: g * expit(av)))


def log_sigmoid(a):
    """log(1 / (1 + exp(-a))), stable for large |a|."""
    a = as_tensor(a)
    av = a.value
    return _node(-np.logaddexp(0.0, -av), (a, lambda g: g * expit(-av)))


def maximum(a, floor):
    """Elementwise max against a constant floor; the gradient is cut below it."""
    a = as_tensor(a)
    av = a.value
    mask = av > floor
    return _node(np.where(mask, av, floor), (a, lambda g: g * mask))


# -------------------------------------------------------------- reductions etc


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a, vjp))


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a, lambda g: g.reshape(old)))


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _node(a.value.transpose(axes), (a, lambda g: g.transpose(inverse)))


def swap_last(a):
    a = as_tensor(a)
    return _node(np.swapaxes(a.value, -1, -2), (a, lambda g: np.swapaxes(g, -1, -2)))


def _is_basic(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(Ellipsis), type(None))) for p in parts)


def getitem(a, index):
    a = as_tensor(a)
    shape = a.shape
    basic = _is_basic(index)

    def vjp(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return out

    return _node(a.value[index], (a, vjp))


def concatenate(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 1:
        return tensors[0]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    value = np.concatenate([t.value for t in tensors], axis=axis)

    def piece(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _node(value, *[(t, piece(i)) for i, t in enumerate(tensors)])


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    value = np.stack([t.value for t in tensors], axis=axis)

    def piece(i):
        return lambda g: np.take(g, i, axis=axis)

    return _node(value, *[(t, piece(i)) for i, t in enumerate(tensors)])


def diag_part(a):
    """Diagonal over the last two axes."""
    a = as_tensor(a)
    return _node(np.diagonal(a.value, axis1=-2, axis2=-1).copy(), (a, lambda g: _embed(g)))


def diag_embed(v):
    """Inverse of :func:`diag_part`: a (stack of) diagonal matrices."""
    v = as_tensor(v)
    return _node(_embed(v.value), (v, lambda g: np.diagonal(g, axis1=-2, axis2=-1).copy()))


def _embed(v):
    n = v.shape[-1]
    out = np.zeros(v.shape + (n,))
    idx = np.arange(n)
    out[..., idx, idx] = v
    return out


def tril(a, k=0):
    a = as_tensor(a)
    return _node(np.tril(a.value, k), (a, lambda g: np.tril(g, k)))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _node(
        av @ bv,
        (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), a.shape)),
        (b, lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, b.shape)),
    )


# ---------------------------------------------------------------- linear algebra


def _jittered_cholesky(a, jitter):
    ladder = [float(jitter)] + [j for j in JITTER_LADDER if j > jitter]
    eye = np.eye(a.shape[0])
    for i, j in enumerate(ladder):
        try:
            chol = np.linalg.cholesky(a + j * eye if j else a)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(chol)) and np.all(np.diag(chol) > 0):
            if i > 0:
                logger.warning("cholesky: escalated jitter from %g to %g (n=%d)", jitter, j, a.shape[0])
            return chol, j
    raise NotPositiveDefinite(
        f"matrix of size {a.shape[0]} not positive definite after jitter {ladder[-1]:g}"
    )


def cholesky(a, jitter=0.0):
    """Lower Cholesky factor of ``a + jitter*I``, escalating jitter on failure.

    Escalation walks :data:`JITTER_LADDER` (values above the requested
    jitter) and logs a warning each time it has to. The gradient is the
    symmetric one, i.e. it treats ``a`` as a symmetric matrix.
    """
    a = as_tensor(a)
    A = a.value
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"cholesky needs a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = np.max(np.abs(A)) if A.size else 0.0
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10 * scale:
        raise ValidationError("cholesky needs a symmetric matrix")
    L, _ = _jittered_cholesky(A, jitter)

    def vjp(g):
        p = np.tril(L.T @ g)
        p[np.diag_indices_from(p)] *= 0.5
        y = sla.solve_triangular(L, p, lower=True, trans="T")
        s = sla.solve_triangular(L, y.T, lower=True, trans="T").T
        return 0.5 * (s + s.T)

    return _node(L, (a, vjp))


def solve_triangular(L, B, lower=True, trans=False):
    """Solve ``op(L) X = B`` with ``op`` the identity or transpose."""
    L, B = as_tensor(L), as_tensor(B)
    Lv, Bv = L.value, B.value
    vector = Bv.ndim == 1
    B2 = Bv[:, None] if vector else Bv
    X = sla.solve_triangular(Lv, B2, lower=lower, trans="T" if trans else "N")
    cache = {}

    def bbar(g):
        key = id(g)
        if key not in cache:
            g2 = g[:, None] if vector else g
            cache.clear()
            cache[key] = sla.solve_triangular(Lv, g2, lower=lower, trans="N" if trans else "T")
        return cache[key]

    def vjp_L(g):
        gb = bbar(g)
        grad = -(X @ gb.T) if trans else -(gb @ X.T)
        return np.tril(grad) if lower else np.triu(grad)

    def vjp_B(g):
        gb = bbar(g)
        return gb[:, 0] if vector else gb

    return _node(X[:, 0] if vector else X, (L, vjp_L), (B, vjp_B))


# -------------------------------------------------------------- kernel helpers


def weighted_sqdist(x, y, w):
    """Pairwise ``sum_d w_d (x_nd - y_md)^2`` as an N x M tensor.

    Built from explicit differences so that ``weighted_sqdist(x, x, w)`` is
    exactly symmetric with an exactly zero diagonal.
    """
    x, y, w = as_tensor(x), as_tensor(y), as_tensor(w)
    if x.shape[1] != y.shape[1] or w.shape != (x.shape[1],):
        raise ValidationError(
            f"weighted_sqdist: shapes {x.shape}, {y.shape}, weights {w.shape} disagree"
        )
    diff = x.value[:, None, :] - y.value[None, :, :]
    wv = w.value

    def vjp_x(g):
        return 2.0 * np.einsum("nm,nmd->nd", g, diff) * wv

    def vjp_y(g):
        return -2.0 * np.einsum("nm,nmd->md", g, diff) * wv

    def vjp_w(g):
        return np.einsum("nm,nmd->d", g, diff * diff)

    return _node((diff * diff) @ wv, (x, vjp_x), (y, vjp_y), (w, vjp_w))


_SQRT5 = np.sqrt(5.0)


def matern52_profile(d2):
    """Unit-variance Matern-5/2 profile as a function of squared distance.

    Differentiating in ``d2`` rather than ``r`` keeps the gradient finite at
    coincident points.
    """
    d2 = as_tensor(d2)
    r = np.sqrt(np.maximum(d2.value, 0.0))
    e = np.exp(-_SQRT5 * r)
    out = (1.0 + _SQRT5 * r + (5.0 / 3.0) * d2.value) * e
    slope = -(5.0 / 6.0) * (1.0 + _SQRT5 * r) * e
    return _node(out, (d2, lambda g: g * slope))


# ------------------------------------------------------------------ backward


def backward(output, leaves):
    """Gradients of scalar ``output`` with respect to each tensor in ``leaves``.

    Returns a list aligned with ``leaves``; leaves the output does not depend
    on get exact zeros.
    """
    if output.size != 1:
        raise ValidationError(f"backward needs a scalar output, got shape {output.shape}")
    order = []
    seen = set()
    stack_ = [(output, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack_.append((parent, False))

    wanted = {id(leaf) for leaf in leaves}
    grads = {id(output): np.ones_like(output.value)}
    kept = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in wanted:
            kept[id(node)] = g
        for parent, vjp in node.parents:
            pg = vjp(g)
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return [np.array(kept[id(l)], dtype=np.float64) if id(l) in kept else np.zeros(l.shape) for l in leaves]


# ----------------------------------------------------------------- parameters

UNCONSTRAINED = "unconstrained"
POSITIVE = "positive"
LOWER_TRIANGULAR = "lower-triangular"
CONSTRAINTS = (UNCONSTRAINED, POSITIVE, LOWER_TRIANGULAR)


def softplus_inverse(y):
    y = np.asarray(y, dtype=np.float64)
    return y + np.log(-np.expm1(-y))


def _constrain_numpy(raw, constraint):
    if constraint == POSITIVE:
        return np.logaddexp(0.0, raw)
    if constraint == LOWER_TRIANGULAR:
        out = np.tril(raw, -1)
        n = raw.shape[-1]
        idx = np.arange(n)
        out[..., idx, idx] = np.logaddexp(0.0, raw[..., idx, idx])
        return out
    return raw.copy()


def _unconstrain_numpy(value, constraint):
    value = np.asarray(value, dtype=np.float64)
    if constraint == POSITIVE:
        if np.any(value <= 0):
            raise ValidationError("positive parameter received a non-positive value")
        return softplus_inverse(value)
    if constraint == LOWER_TRIANGULAR:
        n = value.shape[-1]
        idx = np.arange(n)
        diag = value[..., idx, idx]
        if np.any(diag <= 0):
            raise ValidationError("triangular parameter needs a positive diagonal")
        out = np.tril(value, -1)
        out[..., idx, idx] = softplus_inverse(diag)
        return out
    return value.copy()


class Parameter:
    """A trainable array stored in an unconstrained parameterisation.

    ``param()`` returns the constrained value as a graph node; ``param.value``
    returns it as a plain array. Non-trainable parameters behave as constants
    in every graph.
    """

    def __init__(self, value, constraint=UNCONSTRAINED, trainable=True, name=None):
        if constraint not in CONSTRAINTS:
            raise ValidationError(f"unknown constraint {constraint!r}")
        self.constraint = constraint
        self.name = name
        self.raw = Tensor(_unconstrain_numpy(value, constraint), requires_grad=trainable)

    @property
    def trainable(self):
        return self.raw.requires_grad

    @trainable.setter
    def trainable(self, flag):
        self.raw.requires_grad = bool(flag)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape}, {self.constraint})"

    @property
    def shape(self):
        return self.raw.shape

    @property
    def unconstrained(self):
        return self.raw.value

    @unconstrained.setter
    def unconstrained(self, raw):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.shape != self.raw.shape:
            raise ValidationError(f"{self.name}: shape {raw.shape} != {self.raw.shape}")
        self.raw.value = raw.copy()

    @property
    def value(self):
        return _constrain_numpy(self.raw.value, self.constraint)

    def assign(self, value):
        self.unconstrained = _unconstrain_numpy(value, self.constraint)

    def __call__(self):
        raw = self.raw
        if self.constraint == POSITIVE:
            return softplus(raw)
        if self.constraint == LOWER_TRIANGULAR:
            return tril(raw, -1) + diag_embed(softplus(diag_part(raw)))
        return raw


def gradient(objective, params):
    """Partials of ``objective`` with respect to each parameter's raw array.

    ``params`` is a mapping name -> Parameter (or a sequence of Parameters);
    the result is keyed the same way. Raises NonFiniteGradient naming the
    first offending parameter.
    """
    items = list(params.items()) if isinstance(params, dict) else list(enumerate(params))
    if not np.all(np.isfinite(objective.value)):
        raise NonFiniteGradient(None, "objective value is not finite")
    grads = backward(objective, [p.raw for _, p in items])
    out = {}
    for (key, p), g in zip(items, grads):
        if not p.trainable:
            g = np.zeros(p.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(p.name or key)
        out[key] = g
    return out
