"""Monte Carlo predictive mixtures and the evaluation metrics."""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp
from scipy.stats import rankdata

from .architecture import propagate
from .exceptions import DegenerateLabels, ShapeMismatch, ValidationError
from .objective import MonteCarloConfig
from .rng import RngStream


@dataclass
class PredictiveMixture:
    """Equal-weight Gaussian mixture per point: ``means``/``variances`` are S x N x D."""

    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.ndim != 3 or self.means.shape != self.variances.shape:
            raise ShapeMismatch("mixture means and variances must share an S x N x D shape")
        if np.any(self.variances < 0):
            raise ValidationError("mixture variances must be >= 0")

    @property
    def num_components(self):
        return self.means.shape[0]

    def mean(self):
        return self.means.mean(axis=0)

    def variance(self):
        """Moment-matched variance of the mixture."""
        m = self.mean()
        return (self.variances + self.means**2).mean(axis=0) - m**2

    def scaled(self, std, mean):
        """Mixture for ``y * std + mean`` (undoing output standardisation)."""
        std = np.asarray(std, dtype=np.float64)
        return PredictiveMixture(self.means * std + mean, self.variances * std**2)


def predict(model, inputs, task, mc=None, stream=None):
    """Latent head mixture over ``mc.eval_samples`` propagations.

    For a Gaussian likelihood the noise variance is added to every
    component, so the mixture is over ``y``. For Bernoulli it stays over the
    latent ``f``; see :func:`bernoulli_probability`.
    """
    mc = mc or MonteCarloConfig()
    stream = stream if stream is not None else RngStream(0)
    means, variances = propagate(model, np.asarray(inputs, dtype=np.float64), task, stream, mc.eval_samples)
    means, variances = means.value, variances.value
    if model.spec.likelihood == "gaussian":
        variances = variances + model.likelihood_variance.value[task]
    return PredictiveMixture(means, variances)


def bernoulli_probability(pred, nodes=20):
    """``p(y=1)`` averaged over mixture components, each by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite.hermgauss(int(nodes))
    f = pred.means[..., None] + np.sqrt(2.0 * pred.variances)[..., None] * x
    per_component = (expit(f) * (w / np.sqrt(np.pi))).sum(axis=-1)
    return per_component.mean(axis=0)


def nlpp(pred, y):
    """Mean over points of ``-log (1/S) sum_s N(y_n; mu_ns, v_ns)``, summed over output dims."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(-1, 1)
    if y.shape != pred.means.shape[1:]:
        raise ShapeMismatch(f"targets {y.shape} vs predictions {pred.means.shape[1:]}")
    v = pred.variances
    if np.any(v <= 0):
        raise ValidationError("NLPP needs strictly positive predictive variances")
    logp = -0.5 * (np.log(2.0 * np.pi * v) + (y - pred.means) ** 2 / v)
    # log-mean-exp over components, then joint density over output dims
    per_point = logsumexp(logp, axis=0) - np.log(pred.num_components)
    return float(-per_point.sum(axis=-1).mean())


def rmse(pred_means, y):
    pred_means = np.asarray(pred_means, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if pred_means.shape != y.shape:
        raise ShapeMismatch(f"predictions {pred_means.shape} vs targets {y.shape}")
    return float(np.sqrt(np.mean((pred_means - y) ** 2)))


def roc_auc(scores, labels):
    """Mann-Whitney AUC: ``P(s+ > s-) + P(s+ == s-) / 2`` from tie-averaged ranks."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ShapeMismatch("scores and labels must have the same length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValidationError("labels must be 0 or 1")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("ROC-AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def accuracy(probabilities, labels, threshold=0.5):
    probabilities = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    return float(np.mean((probabilities > threshold) == (labels == 1)))
