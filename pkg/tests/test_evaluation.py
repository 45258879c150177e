import numpy as np
import pytest
from conftest import tiny_model
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_auc, naive_nlpp, toy_f

from mtdgp.evaluation import PredictiveMixture, accuracy, bernoulli_probability, nlpp, predict, rmse, roc_auc
from mtdgp.exceptions import DegenerateLabels, ShapeMismatch, ValidationError
from mtdgp.objective import MonteCarloConfig
from mtdgp.rng import RngStream
from mtdgp.svgp import conditional_marginals


def mixture(means, variances):
    return PredictiveMixture(np.asarray(means, float), np.asarray(variances, float))


def test_nlpp_standard_normal_at_mean():
    assert nlpp(mixture([[[0.0]]], [[[1.0]]]), [[0.0]]) == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-15)
    assert nlpp(mixture([[[0.0]]], [[[1.0]]]), [[0.0]]) == pytest.approx(0.91894, abs=1e-5)


def test_nlpp_identical_components_collapse():
    single = mixture([[[0.3], [1.0]]], [[[0.5], [2.0]]])
    many = mixture(np.repeat(single.means, 7, 0), np.repeat(single.variances, 7, 0))
    assert nlpp(many, [[0.1], [0.4]]) == pytest.approx(nlpp(single, [[0.1], [0.4]]), abs=1e-14)


def test_nlpp_matches_high_precision_summation():
    r = np.random.default_rng(0)
    means = r.standard_normal((3, 5, 2))
    variances = r.uniform(0.05, 2.0, (3, 5, 2))
    y = r.standard_normal((5, 2)) * 3
    assert nlpp(mixture(means, variances), y) == pytest.approx(naive_nlpp(means, variances, y), abs=1e-12)


def test_nlpp_is_stable_far_in_the_tail():
    value = nlpp(mixture([[[0.0]], [[1.0]]], [[[1e-4]], [[1e-4]]]), [[100.0]])
    assert np.isfinite(value) and value > 1e6


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_nlpp_invariant_under_component_permutation(seed):
    r = np.random.default_rng(seed)
    means, variances = r.standard_normal((4, 3, 1)), r.uniform(0.1, 2, (4, 3, 1))
    y = r.standard_normal((3, 1))
    perm = r.permutation(4)
    assert nlpp(mixture(means, variances), y) == pytest.approx(
        nlpp(mixture(means[perm], variances[perm]), y), abs=1e-12
    )


def test_rmse_cases():
    y = np.random.default_rng(1).standard_normal((6, 2))
    assert rmse(y, y) == 0.0
    assert rmse(y + 0.7, y) == pytest.approx(0.7, abs=1e-14)
    p = y + np.random.default_rng(2).standard_normal((6, 2))
    assert rmse(p, y) == pytest.approx(np.sqrt(np.mean((p - y) ** 2)), abs=1e-12)
    with pytest.raises(ShapeMismatch):
        rmse(y[:3], y)


def test_auc_cases():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.5] * 4, [0, 1, 0, 1]) == 0.5
    scores, labels = [0.1, 0.4, 0.35, 0.8, 0.4, 0.2], [0, 0, 1, 1, 1, 0]
    assert roc_auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-15)
    assert roc_auc(scores, labels) == pytest.approx(7.5 / 9, abs=1e-15)
    with pytest.raises(DegenerateLabels):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValidationError):
        roc_auc([0.1, 0.2], [1, 2])


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_auc_invariant_to_monotone_transform_and_matches_pairs(seed):
    r = np.random.default_rng(seed)
    scores = np.round(r.standard_normal(12), 1)
    labels = r.integers(0, 2, 12)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    a = roc_auc(scores, labels)
    assert a == pytest.approx(roc_auc(np.exp(3 * scores) + 1, labels), abs=1e-15)
    assert a == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)


def test_accuracy_and_bernoulli_probability():
    assert accuracy([0.9, 0.2, 0.6], [1, 0, 0]) == pytest.approx(2 / 3)
    p = bernoulli_probability(mixture([[[0.0]], [[0.0]]], [[[3.0]], [[3.0]]]))
    assert p[0, 0] == pytest.approx(0.5, abs=1e-14)
    big = bernoulli_probability(mixture([[[8.0]]], [[[0.0]]]))
    assert big[0, 0] == pytest.approx(1 / (1 + np.exp(-8.0)), rel=1e-12)


def test_igp_prediction_is_single_component_with_noise():
    model, data = tiny_model("iGP")
    pred = predict(model, data[0].inputs, 0, MonteCarloConfig(eval_samples=30), RngStream(0))
    assert pred.num_components == 1
    mean, var = conditional_marginals(model.heads[0], data[0].inputs)
    np.testing.assert_allclose(pred.means[0], mean.value)
    np.testing.assert_allclose(pred.variances[0], var.value + model.likelihood_variance.value[0])


def test_single_sample_mixture_is_one_gaussian():
    model, data = tiny_model("mMDGP")
    pred = predict(model, data[0].inputs, 0, MonteCarloConfig(eval_samples=1), RngStream(0))
    assert pred.num_components == 1
    np.testing.assert_allclose(pred.variance(), pred.variances[0])


def test_predict_deterministic_given_stream():
    model, data = tiny_model("mMDGP")
    a = predict(model, data[0].inputs, 0, MonteCarloConfig(eval_samples=5), RngStream(3))
    b = predict(model, data[0].inputs, 0, MonteCarloConfig(eval_samples=5), RngStream(3))
    np.testing.assert_array_equal(a.variances, b.variances)


def test_trained_toy_model_is_calibrated_at_training_inputs(toy_run):
    model, st_, raw = toy_run["model"], toy_run["standardizer"], toy_run["raw"]
    for t, d in enumerate(raw):
        pred = predict(model, st_.apply_inputs(d.inputs), t, MonteCarloConfig(eval_samples=100), RngStream(1))
        pred = pred.scaled(st_.output_std[t], st_.output_mean[t])
        truth = toy_f(d.inputs[:, 0])[t]
        z = np.abs(pred.mean()[:, 0] - truth) / np.sqrt(pred.variance()[:, 0])
        assert np.mean(z <= 3.0) >= 0.95
