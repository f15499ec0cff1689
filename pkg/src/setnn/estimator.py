"""Scikit-learn style classifier facade over the functional training core.

SetTrainedClassifier follows the standard estimator conventions (parameters
stored verbatim by __init__, learned state in trailing-underscore attributes,
get_params/set_params round-trip, fit returns self) without depending on
scikit-learn itself. Inputs must live in the unit box, matching the dataset
contract of the rest of the package.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset
from .network import init_mlp, point_forward, softmax
from .training import SetLossConfig, TrainConfig, train
from .verification import evaluate, verify_robust

__all__ = ["NotFittedError", "SetTrainedClassifier"]


class NotFittedError(RuntimeError):
    """Raised when predict/score/verify is called before fit."""


class SetTrainedClassifier:
    """MLP classifier trained on input sets instead of points.

    With epsilon=0 (the default) this is plain point training. A positive
    epsilon trains on l-inf boxes of that radius and tau blends the set-size
    penalty into the loss, which trades a little clean accuracy for formally
    verifiable robustness.
    """

    def __init__(
        self,
        hidden=(100, 100),
        activation="relu",
        epsilon=0.0,
        tau=0.0,
        learning_rate=0.01,
        epochs=10,
        batch_size=64,
        optimizer="adam",
        seed=0,
        backend="zonotope_full",
        input_set_mode="linf",
        warmup_epochs=0,
        rampup_epochs=0,
        grad_clip_norm=10.0,
    ):
        self.hidden = hidden
        self.activation = activation
        self.epsilon = epsilon
        self.tau = tau
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.seed = seed
        self.backend = backend
        self.input_set_mode = input_set_mode
        self.warmup_epochs = warmup_epochs
        self.rampup_epochs = rampup_epochs
        self.grad_clip_norm = grad_clip_norm

    _PARAM_NAMES = (
        "hidden", "activation", "epsilon", "tau", "learning_rate", "epochs",
        "batch_size", "optimizer", "seed", "backend", "input_set_mode",
        "warmup_epochs", "rampup_epochs", "grad_clip_norm",
    )

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(
                    f"unknown parameter {name!r} for SetTrainedClassifier"
                )
            setattr(self, name, value)
        return self

    # -- learned state ----------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError(
                "this SetTrainedClassifier instance is not fitted yet; "
                "call fit before using it"
            )

    def _validate_X(self, X, expect_features=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D (samples, features), got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X must be finite")
        if expect_features is not None and X.shape[1] != expect_features:
            raise ValueError(
                f"X has {X.shape[1]} features, but this model was fitted "
                f"with {expect_features}"
            )
        return X

    def _encode_labels(self, y):
        y = np.asarray(y)
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.all(self.classes_[idx] == y):
            unknown = sorted(set(np.asarray(y).tolist()) - set(self.classes_.tolist()))
            raise ValueError(f"y contains labels not seen during fit: {unknown}")
        return idx

    def fit(self, X, y):
        """Train a fresh network on (X, y); returns self."""
        X = self._validate_X(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(
                f"y must be 1-D with one label per sample, got shape {y.shape}"
            )
        classes, encoded = np.unique(y, return_inverse=True)
        if len(classes) < 2:
            raise ValueError(f"need at least 2 classes, got {len(classes)}")
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]

        dataset = Dataset(X, encoded, len(classes))
        dims = [X.shape[1], *(int(h) for h in self.hidden), len(classes)]
        net = init_mlp(dims, self.activation, seed=self.seed)
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            seed=self.seed,
            epsilon=self.epsilon,
            grad_clip_norm=self.grad_clip_norm,
            warmup_epochs=self.warmup_epochs,
            rampup_epochs=self.rampup_epochs,
            backend=self.backend,
            input_set_mode=self.input_set_mode,
        )
        # the loss normalizer must stay positive even for point training
        loss_cfg = SetLossConfig(
            tau=self.tau, epsilon=self.epsilon if self.epsilon > 0 else 1.0
        )
        self.net_, history = train(net, dataset, cfg, loss_cfg)
        self.history_ = tuple(history)
        return self

    def decision_function(self, X):
        """Raw logits, shape (n_samples, n_classes)."""
        self._check_fitted()
        X = self._validate_X(X, self.n_features_in_)
        logits, _ = point_forward(self.net_, X)
        return logits

    def predict_proba(self, X):
        """Softmax class probabilities, shape (n_samples, n_classes)."""
        return softmax(self.decision_function(X))

    def predict(self, X):
        """Predicted labels, drawn from the label set seen at fit time."""
        self._check_fitted()
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def score(self, X, y):
        """Mean accuracy of predict(X) against y."""
        self._check_fitted()
        y = np.asarray(y)
        return float(np.mean(self.predict(X) == y))

    def verify(self, X, y, epsilon=None, backend=None):
        """Per-sample certificates: True where the label provably survives
        every l-inf perturbation of the given radius (default: the training
        epsilon)."""
        self._check_fitted()
        X = self._validate_X(X, self.n_features_in_)
        idx = self._encode_labels(y)
        eps = self.epsilon if epsilon is None else epsilon
        backend = self.backend if backend is None else backend
        return np.array([
            verify_robust(self.net_, x, int(k), eps, backend)
            for x, k in zip(X, idx)
        ])

    def evaluate(self, X, y, epsilon=None, backend=None):
        """Full robustness metrics (clean / falsified / fast-verified)."""
        self._check_fitted()
        X = self._validate_X(X, self.n_features_in_)
        idx = self._encode_labels(y)
        eps = self.epsilon if epsilon is None else epsilon
        backend = self.backend if backend is None else backend
        return evaluate(self.net_, Dataset(X, idx, len(self.classes_)), eps,
                        backend=backend)
