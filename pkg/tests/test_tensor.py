import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import relative_error
from scipy import linalg

from mtdgp import tensor as tn
from mtdgp.exceptions import NonFiniteGradient, NotPositiveDefinite, ValidationError
from mtdgp.tensor import LOWER_TRIANGULAR, POSITIVE, Parameter, Tensor


def numeric_grad(f, x, step=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        up, down = x.copy(), x.copy()
        up[idx] += step
        down[idx] -= step
        g[idx] = (f(up) - f(down)) / (2 * step)
    return g


def check_grad(build, *arrays, tol=1e-6):
    """Compare backward() with central differences for a scalar-valued graph."""
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*leaves)
    grads = tn.backward(out, leaves)
    for i, a in enumerate(arrays):
        def f(v, i=i):
            args = [Tensor(x) for x in arrays]
            args[i] = Tensor(v)
            return float(build(*args).value)

        fd = numeric_grad(f, a.copy())
        assert relative_error(grads[i], fd, floor=1e-6).max() < tol, (i, grads[i], fd)


def spd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


rng = np.random.default_rng(0)


@pytest.mark.parametrize(
    "build",
    [
        lambda a, b: (a * b + a / (b * b + 1.0) - b).sum(),
        lambda a, b: (tn.exp(a) * tn.sin(b) + tn.cos(a * b)).sum(),
        lambda a, b: (tn.log(tn.softplus(a)) + tn.sqrt(tn.softplus(b))).sum(),
        lambda a, b: (a @ b.T).sum() + tn.square(a).mean(),
        lambda a, b: (tn.log_sigmoid(a - b) ** 3.0).sum(),
        lambda a, b: tn.concatenate([a, b], axis=0)[1:3].sum() + tn.stack([a, b])[:, 0, 1].sum(),
        lambda a, b: tn.transpose(a.reshape(3, 2), (1, 0)).sum(axis=0).sum() + b[np.array([0, 0, 2]), 1].sum(),
    ],
)
def test_elementwise_and_shape_ops_match_finite_differences(build):
    a = rng.standard_normal((3, 2))
    b = rng.standard_normal((3, 2))
    check_grad(build, a, b)


def test_broadcasting_gradient_is_unbroadcast():
    check_grad(lambda a, b: (a * b).sum() + (a + b).sum(), rng.standard_normal((4, 3)), rng.standard_normal(3))
    check_grad(lambda a, b: (a / b).sum(), rng.standard_normal((2, 4, 3)), rng.uniform(1, 2, (4, 1)))


def test_batched_matmul_gradient():
    check_grad(lambda a, b: tn.square(a @ b).sum(), rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 2)))


def test_diag_and_tril_ops():
    check_grad(lambda a: tn.square(tn.diag_part(a)).sum() + tn.tril(a, -1).sum(), rng.standard_normal((4, 4)))
    check_grad(lambda v: (tn.diag_embed(v) @ np.arange(9.0).reshape(3, 3)).sum(), rng.standard_normal(3))


def test_maximum_floors_value_and_cuts_gradient():
    a = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    out = tn.maximum(a, 0.0)
    np.testing.assert_array_equal(out.value, [0.0, 0.5, 2.0])
    (g,) = tn.backward(out.sum(), [a])
    np.testing.assert_array_equal(g, [0.0, 1.0, 1.0])


def test_cholesky_value_and_gradient():
    a = spd(4, 1)
    np.testing.assert_allclose(tn.cholesky(a).value, np.linalg.cholesky(a), atol=1e-12)
    w = rng.standard_normal((4, 4))

    def build(x):
        # symmetrise so the finite-difference perturbation stays in the symmetric subspace
        return (tn.cholesky(0.5 * (x + x.T)) * w).sum()

    check_grad(build, a)


def test_logdet_gradient_is_inverse():
    a = spd(3, 2)
    x = Tensor(a, requires_grad=True)
    out = 2.0 * tn.log(tn.diag_part(tn.cholesky(x))).sum()
    (g,) = tn.backward(out, [x])
    np.testing.assert_allclose(g, np.linalg.inv(a), atol=1e-10)


@pytest.mark.parametrize("trans", [False, True])
@pytest.mark.parametrize("vector", [False, True])
def test_solve_triangular_value_and_gradient(trans, vector):
    lower = np.linalg.cholesky(spd(4, 3))
    b = rng.standard_normal(4) if vector else rng.standard_normal((4, 2))
    got = tn.solve_triangular(lower, b, lower=True, trans=trans).value
    np.testing.assert_allclose(got, linalg.solve_triangular(lower, b, lower=True, trans="T" if trans else "N"))
    w = rng.standard_normal(b.shape)
    check_grad(lambda l, x: (tn.solve_triangular(tn.tril(l), x, lower=True, trans=trans) * w).sum(), lower, b)


def test_weighted_sqdist_is_symmetric_with_zero_diagonal_and_correct_gradient():
    x = rng.standard_normal((5, 3))
    w = rng.uniform(0.5, 2.0, 3)
    d2 = tn.weighted_sqdist(x, x, w).value
    np.testing.assert_array_equal(d2, d2.T)
    np.testing.assert_array_equal(np.diag(d2), 0.0)
    y = rng.standard_normal((4, 3))
    ref = (((x[:, None, :] - y[None]) ** 2) * w).sum(-1)
    np.testing.assert_allclose(tn.weighted_sqdist(x, y, w).value, ref, rtol=1e-13)
    check_grad(lambda a, b, c: tn.square(tn.weighted_sqdist(a, b, c)).sum(), x, y, w)


def test_matern_profile_gradient_finite_at_zero_distance():
    d2 = Tensor(np.array([0.0, 1e-30, 0.3, 2.0]), requires_grad=True)
    (g,) = tn.backward(tn.matern52_profile(d2).sum(), [d2])
    assert np.all(np.isfinite(g))
    np.testing.assert_allclose(g[0], -5.0 / 6.0)
    check_grad(lambda d: tn.matern52_profile(d).sum(), np.array([0.1, 0.7, 3.0]))


def test_backward_returns_zeros_for_unreached_leaves():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    ga, gb = tn.backward((a * 2.0).sum(), [a, b])
    np.testing.assert_array_equal(ga, 2.0)
    np.testing.assert_array_equal(gb, 0.0)


def test_shared_subexpression_accumulates():
    a = Tensor(np.array(3.0), requires_grad=True)
    b = a * a
    (g,) = tn.backward(b + b * a, [a])
    assert g == pytest.approx(2 * 3.0 + 3 * 9.0)


def test_deep_graph_does_not_recurse():
    a = Tensor(np.array(1.0), requires_grad=True)
    x = a
    for _ in range(5000):
        x = x + 1e-4 * a
    (g,) = tn.backward(x, [a])
    assert g == pytest.approx(1.5)


# --------------------------------------------------------------- jitter ladder


def test_jitter_ladder_escalates_with_log(caplog):
    # smallest eigenvalue -1e-7: fails at 1e-8, succeeds at 1e-6
    indefinite = np.ones((3, 3)) - 1e-7 * np.eye(3)
    with caplog.at_level(logging.WARNING, logger="mtdgp.tensor"):
        chol = tn.cholesky(indefinite, 1e-8).value
    assert np.all(np.isfinite(chol))
    assert any("jitter" in r.message and "1e-06" in r.message for r in caplog.records)
    np.testing.assert_allclose(chol @ chol.T, indefinite + 1e-6 * np.eye(3), atol=1e-12)


def test_jitter_ladder_exhausted_raises():
    with pytest.raises(NotPositiveDefinite):
        tn.cholesky(-np.eye(3), 1e-8)


def test_cholesky_rejects_asymmetric_and_nonfinite():
    with pytest.raises(ValidationError):
        tn.cholesky(np.array([[2.0, 1.0], [0.0, 2.0]]))
    with pytest.raises((ValidationError, NotPositiveDefinite)):
        tn.cholesky(np.array([[np.nan, 0.0], [0.0, 1.0]]))


# ------------------------------------------------------------------ parameters


@given(st.lists(st.floats(1e-6, 1e6), min_size=1, max_size=5))
@settings(max_examples=50, deadline=None)
def test_positive_constraint_round_trip(values):
    p = Parameter(np.array(values), POSITIVE)
    np.testing.assert_allclose(p.value, values, rtol=1e-9)
    assert np.all(p().value > 0)


@given(st.integers(1, 4), st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_lower_triangular_constraint_round_trip(n, seed):
    r = np.random.default_rng(seed)
    target = np.tril(r.standard_normal((n, n)), -1) + np.diag(r.uniform(0.1, 3.0, n))
    p = Parameter(target, LOWER_TRIANGULAR)
    np.testing.assert_allclose(p.value, target, atol=1e-12)
    p.unconstrained = r.standard_normal((n, n)) * 5
    v = p.value
    assert np.all(np.diag(v) > 0) and np.allclose(np.triu(v, 1), 0)


def test_non_trainable_parameter_gets_zero_gradient():
    a = Parameter(np.array([1.0, 2.0]), trainable=False, name="a")
    b = Parameter(np.array([1.0, 2.0]), name="b")
    g = tn.gradient((a() * b()).sum(), {"a": a, "b": b})
    np.testing.assert_array_equal(g["a"], 0.0)
    np.testing.assert_array_equal(g["b"], [1.0, 2.0])
    a.trainable = True
    assert tn.gradient((a() * b()).sum(), [a, b])[0].tolist() == [1.0, 2.0]


def test_nonfinite_gradient_raises_named():
    p = Parameter(np.array([0.0]), name="zero")
    with pytest.raises(NonFiniteGradient) as err:
        tn.gradient(tn.sqrt(p() * p()).sum() * 0.0 + tn.sqrt(p()).sum(), {"zero": p})
    assert err.value.parameter == "zero"
