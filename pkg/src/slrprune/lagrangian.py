"""Pieces shared by the SLR and ADMM coordinators.

A *layer set* is a plain ``dict`` mapping layer names to arrays. ``W`` holds
every trainable parameter of the objective (biases included, since the loss
depends on them); ``Z`` and ``Lam`` hold only the constrained layers named
in the sparsity plan.
"""
from __future__ import annotations

import math

import numpy as np

from . import models
from .autodiff import frobenius_norm_sq, trace_inner
from .data import batch_checksum
from .exceptions import InfeasibleError, NonFiniteError
from .seeding import epoch_permutation, stream_rng
from .sparsity import project_cardinality


class ModelObjective:
    """Cross-entropy of a model on a dataset, served as a minibatch stream.

    The stream walks through per-epoch shuffled orders and carries over
    epoch boundaries, so any number of inner steps can be requested per
    iteration. A fixed, seeded evaluation batch is drawn once for the SOC
    comparisons.
    """

    def __init__(self, model, dataset, batch_size=128, seed=0, soc_batch_size=512):
        self.model = model
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.params = model.weights()
        n = len(dataset)
        self.steps_per_epoch = math.ceil(n / batch_size)
        pick = stream_rng(seed, "soc-batch").permutation(n)[:min(soc_batch_size, n)]
        self.soc_features = dataset.features[np.sort(pick)]
        self.soc_labels = dataset.labels[np.sort(pick)]
        self.steps_taken = 0
        self._order = None
        self._order_epoch = -1

    @property
    def epoch(self):
        return self.steps_taken / self.steps_per_epoch

    def batches(self, steps):
        for _ in range(steps):
            epoch, slot = divmod(self.steps_taken, self.steps_per_epoch)
            if epoch != self._order_epoch:
                self._order = epoch_permutation(self.seed, epoch, len(self.dataset))
                self._order_epoch = epoch
            index = self._order[slot * self.batch_size:(slot + 1) * self.batch_size]
            self.steps_taken += 1
            yield self.dataset.features[index], self.dataset.labels[index]

    def loss_and_grad(self, batch):
        return models.loss(self.model, batch[0], batch[1], self.params)

    def eval_loss(self, params=None):
        return models.loss_value(self.model, self.soc_features, self.soc_labels, params)

    def checksum(self, batch):
        return batch_checksum(*batch)


class QuadraticObjective:
    """Separable quadratic ``f(W) = sum_n curvature * ||W_n - target_n||^2``.

    Deterministic (every "batch" is the full objective); used for the convex
    toy problems whose optima are known in closed form.
    """

    def __init__(self, target, start=None, curvature=1.0, dtype=np.float64):
        self.target = {k: np.asarray(v, dtype=dtype) for k, v in target.items()}
        start = start if start is not None else {k: np.zeros_like(v) for k, v in self.target.items()}
        self.params = {k: np.array(v, dtype=dtype) for k, v in start.items()}
        self.curvature = curvature
        self.steps_taken = 0
        self.steps_per_epoch = 1

    @property
    def epoch(self):
        return float(self.steps_taken)

    def batches(self, steps):
        for _ in range(steps):
            self.steps_taken += 1
            yield None

    def loss_and_grad(self, batch):
        value = self.eval_loss()
        grads = {k: (2.0 * self.curvature) * (self.params[k] - self.target[k]) for k in self.params}
        return value, grads

    def eval_loss(self, params=None):
        p = self.params if params is None else params
        return float(sum(self.curvature * frobenius_norm_sq(p[k] - self.target[k]) for k in p))

    def checksum(self, batch):
        return "full"


def copy_layers(layers):
    return {k: np.array(v, copy=True) for k, v in layers.items()}


def difference(W, Z):
    return {k: W[k].astype(np.float64) - Z[k].astype(np.float64) for k in Z}


def violation_norm(W, Z):
    """Global Frobenius norm of W - Z over all constrained layers."""
    return math.sqrt(sum(frobenius_norm_sq(d) for d in difference(W, Z).values()))


def coupling_terms(W, Z, Lam, rho):
    """``sum_n tr[Lam_n^T (W_n - Z_n)] + rho/2 ||W_n - Z_n||^2``."""
    total = 0.0
    for k, d in difference(W, Z).items():
        total += trace_inner(Lam[k], d) + 0.5 * rho * frobenius_norm_sq(d)
    return total


def augmented_lagrangian(f_value, W, Z, Lam, rho, plan=None):
    """Augmented Lagrangian value given the loss ``f_value = f(W)``.

    The indicator term is zero for feasible ``Z``; when ``plan`` is given
    and some ``Z_n`` exceeds its budget, :class:`InfeasibleError` is raised
    instead of returning infinity.
    """
    if plan is not None and not plan.feasible(Z):
        raise InfeasibleError("indicator infinite: Z violates its cardinality budget")
    value = float(f_value) + coupling_terms(W, Z, Lam, rho)
    if not math.isfinite(value):
        raise NonFiniteError("non-finite augmented Lagrangian")
    return value


def solve_loss_subproblem(objective, Z, Lam, rho, optimizer, steps):
    """Take ``steps`` minibatch steps on ``L_rho(., Z, Lam)`` in place.

    The gradient of the coupling terms with respect to ``W_n`` is
    ``Lam_n + rho (W_n - Z_n)``; the indicator is constant in ``W``.

    Returns:
        ``(mean_train_loss, first_batch_checksum)``.
    """
    W = objective.params
    losses = []
    checksum = None
    for batch in objective.batches(steps):
        if checksum is None:
            checksum = objective.checksum(batch)
        value, grads = objective.loss_and_grad(batch)
        for k in Z:
            dt = W[k].dtype.type
            grads[k] = grads[k] + Lam[k] + dt(rho) * (W[k] - Z[k])
            if not np.all(np.isfinite(grads[k])):
                raise NonFiniteError(f"non-finite gradient in {k}")
        optimizer.step(W, grads)
        losses.append(value)
    return (float(np.mean(losses)) if losses else math.nan), checksum


def solve_cardinality_subproblem(W, Lam, rho, plan):
    """Closed-form minimizer over Z: project ``W_n + Lam_n / rho`` per layer."""
    if not rho > 0:
        raise ValueError(f"rho must be > 0, got {rho}")
    Z = {}
    for k, budget in plan.budgets.items():
        dt = W[k].dtype.type
        Z[k] = project_cardinality(W[k] + Lam[k] / dt(rho), budget)
    return Z


def update_multipliers(Lam, step, W, Z):
    """``Lam_n + step * (W_n - Z_n)`` for every layer (new dict)."""
    if step == 0:
        return {k: v.copy() for k, v in Lam.items()}
    out = {}
    for k in Lam:
        dt = Lam[k].dtype.type
        out[k] = Lam[k] + dt(step) * (W[k] - Z[k])
    return out
