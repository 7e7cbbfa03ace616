"""Bagged committee of linear hinge-loss classifiers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class CommitteeClassifier(ClassifierMixin, BaseEstimator):
    """K linear SVMs, each fit by subgradient descent on a bootstrap resample.

    Features are standardized with the statistics of the full training set.
    ``decision_function`` is the mean signed margin of the members.

    Parameters
    ----------
    n_members : int
        Committee size K.
    alpha : float
        L2 penalty on the weights (bias is not penalized).
    n_epochs : int
        Passes over each member's bootstrap sample.
    random_state : int
        Seed for bootstrap draws and visiting order.
    """

    def __init__(self, n_members=5, alpha=1e-3, n_epochs=30, random_state=0):
        self.n_members = n_members
        self.alpha = alpha
        self.n_epochs = n_epochs
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(
                f"committee training needs both classes, got {self.classes_.tolist()}"
            )
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        self.mean_ = X.mean(axis=0)
        scale = X.std(axis=0)
        self.scale_ = np.where(scale > 0, scale, 1.0)
        Z = (X - self.mean_) / self.scale_

        rng = np.random.default_rng(self.random_state)
        n = len(Z)
        coefs, intercepts = [], []
        for _ in range(self.n_members):
            idx = rng.integers(0, n, size=n)
            w, b = self._fit_member(Z[idx], signs[idx], rng)
            coefs.append(w)
            intercepts.append(b)
        self.coef_ = np.asarray(coefs)
        self.intercept_ = np.asarray(intercepts)
        if not (np.all(np.isfinite(self.coef_)) and np.all(np.isfinite(self.intercept_))):
            raise FloatingPointError("committee weights diverged")
        return self

    def _fit_member(self, Z, s, rng):
        # Pegasos step size 1 / (alpha * t), averaged iterate
        n, d = Z.shape
        w = np.zeros(d)
        b = 0.0
        w_avg = np.zeros(d)
        b_avg = 0.0
        t = 0
        for _ in range(self.n_epochs):
            for i in rng.permutation(n):
                t += 1
                eta = 1.0 / (self.alpha * (t + 1.0 / self.alpha))
                margin = s[i] * (Z[i] @ w + b)
                w *= 1.0 - eta * self.alpha
                if margin < 1.0:
                    w += eta * s[i] * Z[i]
                    b += eta * s[i]
                w_avg += (w - w_avg) / t
                b_avg += (b - b_avg) / t
        return w_avg, b_avg

    def member_margins(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        Z = (X - self.mean_) / self.scale_
        return Z @ self.coef_.T + self.intercept_

    def decision_function(self, X):
        return self.member_margins(X).mean(axis=1)

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, self.classes_[1], self.classes_[0])


def train_committee(features, labels, n_members=5, seed=0, **kwargs) -> CommitteeClassifier:
    return CommitteeClassifier(n_members=n_members, random_state=seed, **kwargs).fit(
        features, labels
    )


def score(model: CommitteeClassifier, features) -> np.ndarray:
    return model.decision_function(np.atleast_2d(features))
