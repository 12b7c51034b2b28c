"""scikit-learn style wrapper around the penalised fair trainer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adversary import AdversaryConfig
from .constraints import ConstraintSpec
from .data import Column, Dataset
from .surrogates import SurrogateSpec
from .trainer import TrainConfig, select_model, train_restarts


class FairClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier trained with a surrogate fairness penalty.

    Parameters mirror :class:`~slidefair.trainer.TrainConfig`.  ``fit`` takes
    the sensitive attribute as a separate ``sensitive`` array (values 0/1);
    ``continuous`` marks the columns an individual-fairness adversary may move.
    """

    def __init__(self, criterion="di", surrogate="slide", tau=0.1, tau_range=None, lam=1.0, epochs=2000,
                 lr=0.05, architecture="mlp", hidden_width=100, restarts=1, mode="plain", gamma=None,
                 epsilon=0.1, target_accuracy=None, random_state=0, continuous=None):
        self.criterion = criterion
        self.surrogate = surrogate
        self.tau = tau
        self.tau_range = tau_range
        self.lam = lam
        self.epochs = epochs
        self.lr = lr
        self.architecture = architecture
        self.hidden_width = hidden_width
        self.restarts = restarts
        self.mode = mode
        self.gamma = gamma
        self.epsilon = epsilon
        self.target_accuracy = target_accuracy
        self.random_state = random_state
        self.continuous = continuous

    def _config(self):
        return TrainConfig(epochs=self.epochs, lr=self.lr, lam=self.lam,
                           surrogate=SurrogateSpec(self.surrogate, self.tau), tau_range=self.tau_range,
                           constraint=ConstraintSpec(self.criterion, gamma=self.gamma, epsilon=self.epsilon),
                           restarts=self.restarts, mode=self.mode, target_accuracy=self.target_accuracy,
                           seed=int(self.random_state or 0), architecture=self.architecture,
                           hidden_width=self.hidden_width, adversary=AdversaryConfig(epsilon=self.epsilon))

    def _dataset(self, X, y, sensitive):
        d = X.shape[1]
        cont = np.ones(d, bool) if self.continuous is None else np.asarray(self.continuous, bool)
        if cont.shape != (d,):
            raise ValueError("continuous must have one entry per feature")
        schema = [Column(f"x{j}", "continuous" if cont[j] else "onehot", f"x{j}") for j in range(d)]
        return Dataset(X, y, sensitive, schema)

    def fit(self, X, y, sensitive=None, X_val=None, y_val=None, sensitive_val=None):
        X, y = check_X_y(X, y, dtype=float)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"FairClassifier is binary; got {len(self.classes_)} classes")
        y_pm = np.where(y == self.classes_[1], 1.0, -1.0)
        z = None if sensitive is None else np.asarray(sensitive, float)
        self.n_features_in_ = X.shape[1]
        cfg = self._config()
        data = self._dataset(X, y_pm, z)
        runs = train_restarts(data, cfg)
        if X_val is not None:
            Xv = check_array(X_val, dtype=float)
            yv = np.where(np.asarray(y_val) == self.classes_[1], 1.0, -1.0)
            val = self._dataset(Xv, yv, None if sensitive_val is None else np.asarray(sensitive_val, float))
        else:
            val = data
        best = select_model(runs, val, cfg.target_accuracy, cfg.constraint, cfg.accuracy_band, cfg.adversary)
        self.params_ = best.params
        self.train_result_ = best
        self.candidates_ = runs
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.params_.forward(X)

    def predict(self, X):
        s = self.decision_function(X)
        return np.where(s > 0, self.classes_[1], self.classes_[0])

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1 - p, p])
