"""scikit-learn style wrapper around the numpy network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..validation import check_binary_labels, check_patches
from .network import NetworkSpec, TrainConfig, predict_proba, reference_spec, train_sgd


class MicroCNNClassifier(ClassifierMixin, BaseEstimator):
    """Binary patch classifier; class 1 is "lesion".

    ``architecture`` is a :class:`NetworkSpec` dict; ``None`` means the
    reference network sized to the training patches.
    """

    def __init__(
        self,
        architecture=None,
        learning_rate=0.01,
        momentum=0.9,
        weight_decay=5e-4,
        batch_size=64,
        epochs=30,
        keep_prob=0.5,
        lr_decay=0.1,
        lr_decay_at=2.0 / 3.0,
        random_state=0,
    ):
        self.architecture = architecture
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.keep_prob = keep_prob
        self.lr_decay = lr_decay
        self.lr_decay_at = lr_decay_at
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr_decay=self.lr_decay,
            lr_decay_at=self.lr_decay_at,
            keep_prob=self.keep_prob,
            seed=self.random_state,
        )

    def fit(self, X, y):
        X = check_patches(X)
        y = check_binary_labels(y, len(X))
        if self.architecture is None:
            spec = reference_spec(patch_px=X.shape[-1], channels=X.shape[1])
        else:
            spec = NetworkSpec.from_dict(self.architecture)
        self.model_ = train_sgd(spec, X, y, self._train_config())
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_patches(X, self.model_.spec.input_shape)
        return predict_proba(self.model_, X)

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)
