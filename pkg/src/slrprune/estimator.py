"""scikit-learn style classifier that trains a dense MLP and prunes it."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .admm import AdmmConfig
from .data import Dataset
from .diagnostics import RunReport
from .models import MLP, evaluate_accuracy
from .optim import OptimizerConfig
from .pipeline import accuracy_at_budget, hardprune, magnitude_prune, masked_retrain, prune_outcome, train
from .slr import SlrConfig
from .sparsity import SparsityPlan

ESTIMATOR_METHODS = ("slr", "admm", "magnitude")


class PruningClassifier(ClassifierMixin, BaseEstimator):
    """Dense MLP trained on ``(X, y)``, then pruned to ``keep_fraction``.

    ``fit`` runs three phases: dense training for ``train_epochs``, pruning
    with ``method`` for ``epochs`` (SLR, ADMM, or one-shot magnitude
    pruning), and optional masked retraining for ``retrain_epochs``.

    Args:
        method: ``"slr"``, ``"admm"`` or ``"magnitude"``.
        hidden_layer_sizes: widths of the hidden ReLU layers.
        keep_fraction: fraction of each weight matrix kept nonzero.
        epochs: pruning epochs (ignored for ``"magnitude"``).
        train_epochs: dense training epochs before pruning.
        retrain_epochs: masked retraining epochs after hardpruning.
        lr: learning rate of the Adam loss-subproblem solver.
        train_lr: Adam learning rate for dense training and retraining.
        batch_size: minibatch size for every phase.
        rho, M, r, s0, inner_steps: engine parameters (``M``, ``r`` and
            ``s0`` only affect SLR).
        random_state: integer seed for every random stream.

    Attributes:
        classes_, n_features_in_, model_, masks_, outcome_, report_.
    """

    def __init__(self, method="slr", hidden_layer_sizes=(300, 100), keep_fraction=0.1,
                 epochs=20, train_epochs=10, retrain_epochs=0, lr=1e-2, train_lr=1e-3,
                 batch_size=128, rho=0.1, M=300.0, r=0.1, s0=1e-2, inner_steps=None,
                 random_state=0):
        self.method = method
        self.hidden_layer_sizes = hidden_layer_sizes
        self.keep_fraction = keep_fraction
        self.epochs = epochs
        self.train_epochs = train_epochs
        self.retrain_epochs = retrain_epochs
        self.lr = lr
        self.train_lr = train_lr
        self.batch_size = batch_size
        self.rho = rho
        self.M = M
        self.r = r
        self.s0 = s0
        self.inner_steps = inner_steps
        self.random_state = random_state

    def _check_params(self):
        if self.method not in ESTIMATOR_METHODS:
            raise ValueError(f"method must be one of {ESTIMATOR_METHODS}, got {self.method!r}")
        if not 0.0 <= self.keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must lie in [0, 1], got {self.keep_fraction}")
        for name in ("epochs", "train_epochs", "retrain_epochs"):
            if int(getattr(self, name)) < 0:
                raise ValueError(f"{name} must be >= 0")
        if any(int(h) < 1 for h in self.hidden_layer_sizes):
            raise ValueError("hidden layer sizes must be >= 1")
        if not isinstance(self.random_state, (int, np.integer)) or self.random_state < 0:
            raise ValueError("random_state must be a non-negative integer")

    def _engine_config(self):
        if self.method == "slr":
            return SlrConfig(rho=self.rho, M=self.M, r=self.r, s0=self.s0, inner_steps=self.inner_steps)
        return AdmmConfig(rho=self.rho, inner_steps=self.inner_steps)

    def fit(self, X, y):
        self._check_params()
        X, y = check_X_y(X, y, dtype=np.float32)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        data = Dataset(X, self._encoder.transform(y), len(self.classes_), "train")
        seed = int(self.random_state)
        sizes = (X.shape[1], *(int(h) for h in self.hidden_layer_sizes), len(self.classes_))
        model = MLP(sizes, seed=seed)
        dense = OptimizerConfig("adam", lr=self.train_lr, batch_size=self.batch_size)
        train(model, data, int(self.train_epochs), dense, seed=seed)
        plan = SparsityPlan.from_keep_fraction(model, self.keep_fraction)
        self.report_ = RunReport(self.method)
        if self.method == "magnitude":
            model, masks = magnitude_prune(model, plan)
            self.outcome_ = prune_outcome("magnitude", model, plan, masks,
                                          evaluate_accuracy(model, data), 0.0)
        else:
            solver = OptimizerConfig("adam", lr=self.lr, batch_size=self.batch_size)
            self.outcome_ = accuracy_at_budget(
                self.method, model, data, data, plan, int(self.epochs), optimizer_config=solver,
                engine_config=self._engine_config(), seed=seed, report=self.report_)
            masks = self.outcome_.masks
        if self.retrain_epochs:
            masked_retrain(model, masks, data, int(self.retrain_epochs), dense, seed=seed)
            hardprune(model, plan)
        self.model_ = model
        self.masks_ = masks
        return self

    def _logits(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float32)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.model_.logits(X)

    def predict_proba(self, X):
        z = self._logits(X).astype(np.float64)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self._logits(X)
        return self.classes_[logits.argmax(axis=1)]

    @property
    def compression_rate_(self):
        check_is_fitted(self, "outcome_")
        return self.outcome_.compression_rate
