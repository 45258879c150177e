import numpy as np
import pytest
from oracles import JITTER, dense_conditional, gaussian_kl, matern52, mc_kl

from mtdgp import tensor as tn
from mtdgp.exceptions import DimensionMismatch
from mtdgp.kernels import Matern52
from mtdgp.rng import RngStream
from mtdgp.svgp import (
    LinearMean,
    SparseGPUnit,
    conditional_marginals,
    identity_projection,
    kl_to_prior,
    sample_outputs,
)


def random_unit(m=4, d=2, p=2, seed=0, mean=False):
    r = np.random.default_rng(seed)
    ls = r.uniform(0.5, 2.0, d)
    kern = Matern52(d, variance=float(r.uniform(0.5, 2.0)), lengthscales=ls)
    mean_fn = LinearMean(identity_projection(d, p)) if mean else None
    unit = SparseGPUnit(kern, r.standard_normal((m, d)), p, mean_fn)
    unit.q_mu.assign(r.standard_normal((m, p)))
    lq = np.tril(r.standard_normal((p, m, m)), -1) * 0.3
    idx = np.arange(m)
    lq[:, idx, idx] = r.uniform(0.2, 1.0, (p, m))
    unit.q_sqrt.assign(lq)
    return unit, ls


def dense_pieces(unit, ls, x):
    z = unit.inducing.value
    v = unit.kernel.signal_variance.value
    kzz = matern52(z, z, ls, v) + JITTER * np.eye(z.shape[0])
    kzx = matern52(z, x, ls, v)
    kxx = matern52(x, x, ls, v)
    lq = unit.q_sqrt.value
    return kxx, kzx, kzz, np.einsum("pij,pkj->pik", lq, lq)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("with_mean", [False, True])
def test_conditional_marginals_match_dense_conditioning(seed, with_mean):
    unit, ls = random_unit(m=4, seed=seed, mean=with_mean)
    x = np.random.default_rng(100 + seed).standard_normal((3, 2))
    mean, var = conditional_marginals(unit, x)
    kxx, kzx, kzz, s = dense_pieces(unit, ls, x)
    z = unit.inducing.value
    mx = unit.mean_fn(x).value
    mz = unit.mean_fn(z).value
    ref_mean, ref_var = dense_conditional(kxx, kzx, kzz, unit.q_mu.value, s, mx, mz)
    np.testing.assert_allclose(mean.value, ref_mean, atol=1e-8, rtol=0)
    np.testing.assert_allclose(var.value, ref_var, atol=1e-8, rtol=0)


def test_kl_matches_closed_form_oracle_per_output():
    unit, ls = random_unit(m=5, p=3, seed=3, mean=True)
    z = unit.inducing.value
    kzz = matern52(z, z, ls, unit.kernel.signal_variance.value) + JITTER * np.eye(5)
    lq = unit.q_sqrt.value
    mz = unit.mean_fn(z).value
    ref = sum(gaussian_kl(unit.q_mu.value[:, p], lq[p] @ lq[p].T, mz[:, p], kzz) for p in range(3))
    assert float(kl_to_prior(unit).value) == pytest.approx(ref, rel=1e-10)


def test_kl_matches_monte_carlo():
    unit, ls = random_unit(m=4, p=1, seed=7)
    z = unit.inducing.value
    kzz = matern52(z, z, ls, unit.kernel.signal_variance.value) + JITTER * np.eye(4)
    lq = unit.q_sqrt.value[0]
    est, se = mc_kl(unit.q_mu.value[:, 0], lq @ lq.T, np.zeros(4), kzz, 1_000_000, seed=11)
    assert abs(float(kl_to_prior(unit).value) - est) < 3 * se


def test_kl_zero_at_prior_and_positive_elsewhere():
    unit, _ = random_unit(m=6, seed=1, mean=True)
    assert float(kl_to_prior(unit).value) > 0
    unit.set_posterior_to_prior()
    assert abs(float(kl_to_prior(unit).value)) < 1e-10


def test_conditional_at_inducing_inputs_recovers_q():
    unit, _ = random_unit(m=4, p=1, seed=2)
    mean, var = conditional_marginals(unit, unit.inducing.value)
    lq = unit.q_sqrt.value[0]
    np.testing.assert_allclose(mean.value[:, 0], unit.q_mu.value[:, 0], atol=1e-6)
    np.testing.assert_allclose(var.value[:, 0], np.diag(lq @ lq.T), atol=1e-6)


def test_variance_clamp_is_counted():
    unit, _ = random_unit(m=3, p=1, seed=4)
    unit.set_posterior_to_prior()
    unit.q_sqrt.assign(1e-9 * np.eye(3)[None])
    unit.kernel.signal_variance.assign(1e-14)
    _, var = conditional_marginals(unit, unit.inducing.value)
    assert unit.clamp_count > 0
    assert np.all(var.value >= 1e-12)


def test_samples_are_keyed_by_point_identity():
    unit, _ = random_unit(m=3, p=2, seed=5)
    x = np.random.default_rng(0).standard_normal((6, 2))
    ids = np.arange(100, 106)
    stream = RngStream(3)
    full = sample_outputs(unit, x, stream, point_ids=ids).value
    part = sample_outputs(unit, x[[4, 1]], stream, point_ids=ids[[4, 1]]).value
    np.testing.assert_allclose(part, full[[4, 1]], rtol=1e-13)
    np.testing.assert_allclose(sample_outputs(unit, x, stream, zero_noise=True).value,
                               conditional_marginals(unit, x)[0].value)


def test_sample_moments_match_marginals():
    unit, _ = random_unit(m=3, p=1, seed=6)
    x = np.zeros((1, 2))
    mean, var = conditional_marginals(unit, x)
    draws = np.array([sample_outputs(unit, x, RngStream(0, i)).value[0, 0] for i in range(4000)])
    assert abs(draws.mean() - mean.value[0, 0]) < 4 * np.sqrt(var.value[0, 0] / 4000)


def test_gradients_through_conditionals_and_kl():
    unit, _ = random_unit(m=3, p=2, seed=8, mean=True)
    x = np.random.default_rng(1).standard_normal((4, 2))
    params = {k: p for k, p in unit.parameters().items() if p.trainable}

    def objective():
        mean, var = conditional_marginals(unit, x)
        return (tn.square(mean) + var).sum() + kl_to_prior(unit)

    g = tn.gradient(objective(), params)
    for name, p in params.items():
        base = p.unconstrained.copy()
        for idx in list(np.ndindex(base.shape))[:6]:
            vals = []
            for sgn in (1, -1):
                v = base.copy()
                v[idx] += sgn * 1e-6
                p.unconstrained = v
                vals.append(float(objective().value))
            p.unconstrained = base
            fd = (vals[0] - vals[1]) / 2e-6
            assert g[name][idx] == pytest.approx(fd, rel=1e-5, abs=1e-7), name


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        SparseGPUnit(Matern52(2), np.zeros((3, 1)), 1)
    unit, _ = random_unit()
    with pytest.raises(DimensionMismatch):
        conditional_marginals(unit, np.zeros((2, 3)))
