"""scikit-learn style wrappers around model building, training and prediction.

Multi-task data is passed flat: ``X`` (N x D), ``y`` and an integer task
label per row. Each row observes one task, so tasks need not share inputs.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y, column_or_1d

from .architecture import RECIPES, ModelSpec, build_model
from .data import TaskDataset, fit_standardizer
from .evaluation import bernoulli_probability, predict
from .exceptions import TaskIndexOutOfRange, ValidationError
from .objective import KLWeights, MonteCarloConfig
from .rng import RngStream
from .training import TrainConfig, train


def check_tasks(tasks, n, num_tasks=None):
    """Validate a per-row integer task label vector."""
    tasks = column_or_1d(np.asarray(tasks))
    if tasks.shape[0] != n:
        raise ValidationError(f"tasks has {tasks.shape[0]} entries, X has {n} rows")
    if not np.issubdtype(tasks.dtype, np.integer):
        if not np.all(np.equal(np.mod(tasks, 1), 0)):
            raise ValidationError("task labels must be integers")
        tasks = tasks.astype(np.int64)
    if tasks.size and tasks.min() < 0:
        raise TaskIndexOutOfRange("task labels must be >= 0")
    if num_tasks is not None and tasks.size and tasks.max() >= num_tasks:
        raise TaskIndexOutOfRange(f"task label {tasks.max()} outside [0, {num_tasks})")
    return tasks


def split_by_task(X, y, tasks, num_tasks):
    return [TaskDataset(X[tasks == t], y[tasks == t], t) for t in range(num_tasks)]


class _MultiTaskDGPBase(BaseEstimator):
    _likelihood = "gaussian"

    def __init__(
        self,
        variant="mMDGP",
        shared_units=(2,),
        task_units=(1,),
        inducing_count=50,
        coregional_rank=1,
        recipe="sarcos",
        kl_weights=None,
        iterations=1000,
        learning_rate=0.01,
        batch_size=None,
        train_samples=5,
        eval_samples=100,
        quadrature_points=20,
        standardize=True,
        random_state=0,
    ):
        self.variant = variant
        self.shared_units = shared_units
        self.task_units = task_units
        self.inducing_count = inducing_count
        self.coregional_rank = coregional_rank
        self.recipe = recipe
        self.kl_weights = kl_weights
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.train_samples = train_samples
        self.eval_samples = eval_samples
        self.quadrature_points = quadrature_points
        self.standardize = standardize
        self.random_state = random_state

    def _mc(self):
        return MonteCarloConfig(self.train_samples, self.eval_samples, self.quadrature_points)

    def _spec(self, n_tasks, input_dim, output_dim):
        v = self.variant
        shared = list(self.shared_units) if v in ("mMDGP", "sMDGP", "cMDGP") else []
        task = list(self.task_units) if v in ("mMDGP", "iDGP") else []
        return ModelSpec(
            v, n_tasks, input_dim, output_dim, shared, task, self.inducing_count, self.coregional_rank,
            self._likelihood,
        )

    def _fit(self, X, y, tasks):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        tasks = check_tasks(tasks, X.shape[0])
        if self.recipe not in RECIPES:
            raise ValidationError(f"recipe must be one of {sorted(RECIPES)}")
        y2 = y.reshape(len(y), -1).astype(np.float64)
        self.n_tasks_ = int(tasks.max()) + 1
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = y2.shape[1]
        self._y_was_1d = y.ndim == 1
        raw = split_by_task(X, y2, tasks, self.n_tasks_)
        empty = [d.task_id for d in raw if d.n == 0]
        if empty:
            raise ValidationError(f"tasks {empty} have no training rows")
        gaussian = self._likelihood == "gaussian"
        if self.standardize:
            self.standardizer_ = fit_standardizer(raw, outputs=gaussian)
            data = self.standardizer_.apply(raw)
        else:
            self.standardizer_ = None
            data = raw
        spec = self._spec(self.n_tasks_, self.n_features_in_, self.n_outputs_)
        self.model_ = build_model(spec, RECIPES[self.recipe], RngStream(self.random_state), data)
        cfg = TrainConfig(self.iterations, self.learning_rate, self.batch_size, self.random_state,
                          trace_every=max(1, self.iterations // 100))
        weights = KLWeights.from_dict(self.kl_weights or {})
        _, self.trace_ = train(self.model_, data, cfg, weights, self._mc())
        return self

    def _predict_mixtures(self, X, tasks):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"X has {X.shape[1]} features, model was fit with {self.n_features_in_}")
        tasks = check_tasks(tasks, X.shape[0], self.n_tasks_)
        Xs = self.standardizer_.apply_inputs(X) if self.standardizer_ is not None else X
        out = {}
        for t in np.unique(tasks):
            rows = np.flatnonzero(tasks == t)
            out[int(t)] = (rows, predict(self.model_, Xs[rows], int(t), self._mc(), RngStream(self.random_state)))
        return out


class MultiTaskDGPRegressor(RegressorMixin, _MultiTaskDGPBase):
    """Multi-task (deep) GP regression with a Gaussian likelihood per task."""

    def fit(self, X, y, tasks):
        return self._fit(X, y, tasks)

    def predict(self, X, tasks, return_std=False):
        """Predictive mean (and standard deviation) on the original target scale."""
        check_is_fitted(self, "model_")
        mean = np.zeros((len(X), self.n_outputs_))
        var = np.zeros((len(X), self.n_outputs_))
        for t, (rows, pred) in self._predict_mixtures(X, tasks).items():
            if self.standardizer_ is not None:
                pred = pred.scaled(self.standardizer_.output_std[t], self.standardizer_.output_mean[t])
            mean[rows] = pred.mean()
            var[rows] = pred.variance()
        if self._y_was_1d:
            mean, var = mean[:, 0], var[:, 0]
        return (mean, np.sqrt(var)) if return_std else mean

    def score(self, X, y, tasks, sample_weight=None):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X, tasks), sample_weight=sample_weight)


class MultiTaskDGPClassifier(ClassifierMixin, _MultiTaskDGPBase):
    """Binary classification per task with a logistic (Bernoulli) likelihood."""

    _likelihood = "bernoulli"

    def fit(self, X, y, tasks):
        y = column_or_1d(y)
        self.classes_ = np.unique(y)
        if self.classes_.size > 2:
            raise ValidationError("only binary labels are supported")
        return self._fit(X, (y == self.classes_[-1]).astype(np.float64), tasks)

    def predict_proba(self, X, tasks):
        p1 = np.zeros(len(X))
        for _, (rows, pred) in self._predict_mixtures(X, tasks).items():
            p1[rows] = bernoulli_probability(pred, self.quadrature_points)[:, 0]
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X, tasks):
        return self.classes_[(self.predict_proba(X, tasks)[:, 1] > 0.5).astype(int)]

    def score(self, X, y, tasks, sample_weight=None):
        from sklearn.metrics import accuracy_score

        return accuracy_score(y, self.predict(X, tasks), sample_weight=sample_weight)
