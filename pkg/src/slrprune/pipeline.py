"""Train, prune and retrain workflows built on the SLR and ADMM engines."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .admm import AdmmConfig, run_admm
from .diagnostics import RunReport
from .lagrangian import ModelObjective
from .models import evaluate_accuracy, loss
from .optim import OptimizerConfig, make_optimizer
from .slr import SlrConfig, StopCriteria, run_slr
from .sparsity import apply_mask, compression_rate, mask_from, project_cardinality

METHODS = ("slr", "admm")


@dataclass
class PruneOutcome:
    """Result of pruning one model.

    ``epochs_to_threshold`` is ``None`` when the threshold was never reached
    (or no threshold was set).
    """

    method: str
    masks: dict
    hardprune_accuracy: float
    compression_rate: float
    epochs_used: float
    epochs_to_threshold: Optional[float] = None
    per_layer_compression: dict = field(default_factory=dict)
    retrain_accuracy: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.hardprune_accuracy <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {self.hardprune_accuracy}")

    @property
    def reached(self):
        return self.epochs_to_threshold is not None

    def to_record(self):
        """Flat record for the metrics log (masks summarized by popcount)."""
        return {
            "type": "prune_outcome",
            "method": self.method,
            "hardprune_accuracy": self.hardprune_accuracy,
            "compression_rate": self.compression_rate,
            "epochs_used": self.epochs_used,
            "epochs_to_threshold": self.epochs_to_threshold,
            "retrain_accuracy": self.retrain_accuracy,
            "kept": {k: int(np.count_nonzero(m)) for k, m in self.masks.items()},
            "per_layer_compression": self.per_layer_compression,
        }


def hardprune(model, plan):
    """Project every planned layer of ``model`` in place.

    Returns:
        ``(model, masks)`` where ``masks[name]`` is the boolean support.
    """
    masks = {}
    for name, budget in plan.budgets.items():
        z = project_cardinality(model.params[name].data, budget)
        model.params[name].data[...] = z
        masks[name] = mask_from(z)
    return model, masks


def magnitude_prune(model, plan):
    """One-shot magnitude pruning of a copy of ``model`` (no AL training)."""
    return hardprune(model.clone(), plan)


def train(model, dataset, epochs, optimizer_config=None, seed=0, masks=None):
    """Plain minibatch training on the loss, optionally under fixed masks.

    With ``masks``, gradients outside the support are zeroed before each
    step and the weights are re-masked after it, so pruned entries stay
    exactly ``+0.0`` whatever the optimizer's internal state.

    Returns:
        Mean training loss per epoch.
    """
    config = optimizer_config or OptimizerConfig()
    objective = ModelObjective(model, dataset, batch_size=config.batch_size, seed=seed)
    optimizer = make_optimizer(config)
    params = objective.params
    history = []
    for _ in range(epochs):
        losses = []
        for batch in objective.batches(objective.steps_per_epoch):
            value, grads = loss(model, batch[0], batch[1], params)
            if masks:
                for name, m in masks.items():
                    grads[name] = apply_mask(grads[name], m)
            optimizer.step(params, grads)
            if masks:
                for name, m in masks.items():
                    params[name][...] = apply_mask(params[name], m)
            losses.append(value)
        history.append(float(np.mean(losses)))
    return history


def masked_retrain(model, masks, dataset, epochs, optimizer_config=None, seed=0):
    """Fine-tune only the surviving weights; returns ``model``."""
    train(model, dataset, epochs, optimizer_config, seed=seed, masks=masks)
    return model


def hardprune_accuracy(model, weights, plan, dataset):
    """Accuracy of a hardpruned clone of ``model`` carrying ``weights``."""
    probe = model.clone()
    probe.load_weights({k: np.asarray(v) for k, v in weights.items()})
    hardprune(probe, plan)
    return evaluate_accuracy(probe, dataset)


def prune_outcome(method, model, plan, masks, accuracy, epochs_used, reached=None):
    """Assemble a :class:`PruneOutcome` for an already hardpruned ``model``."""
    sizes = {k: model.params[k].data.size for k in plan.budgets}
    overall, per_layer = compression_rate(sizes, masks)
    return PruneOutcome(method=method, masks=masks, hardprune_accuracy=accuracy,
                        compression_rate=overall, epochs_used=epochs_used,
                        epochs_to_threshold=reached, per_layer_compression=per_layer)


def accuracy_at_budget(method, model, train_set, eval_set, plan, budget_epochs,
                       threshold=None, check_every=1, optimizer_config=None,
                       engine_config=None, seed=0, report=None, stop_at_threshold=False):
    """Prune ``model`` with SLR or ADMM for ``budget_epochs`` epochs.

    Every ``check_every`` epochs a hardpruned clone is evaluated on
    ``eval_set``; the first epoch at which its accuracy reaches
    ``threshold`` is recorded. Training runs to the full budget unless
    ``stop_at_threshold`` is set. At the end ``model`` itself is hardpruned.

    Args:
        method: ``"slr"`` or ``"admm"``.
        engine_config: :class:`SlrConfig` or :class:`AdmmConfig`; its
            ``inner_steps`` fixes how many minibatches form one iteration
            (``None`` means one epoch).

    Returns:
        :class:`PruneOutcome`; ``epochs_to_threshold`` is ``None`` when the
        threshold was not reached.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    config = optimizer_config or OptimizerConfig()
    if engine_config is None:
        engine_config = SlrConfig() if method == "slr" else AdmmConfig()
    objective = ModelObjective(model, train_set, batch_size=config.batch_size, seed=seed)
    steps = engine_config.inner_steps or objective.steps_per_epoch
    total_steps = int(round(budget_epochs * objective.steps_per_epoch))
    iterations = math.ceil(total_steps / steps) if total_steps else 0
    per_check = max(1, int(round(check_every * objective.steps_per_epoch / steps)))
    reached = []

    def evaluate(W):
        accuracy = hardprune_accuracy(model, W, plan, eval_set)
        if threshold is not None and not reached and accuracy >= threshold:
            reached.append(objective.epoch)
        return accuracy

    stop = StopCriteria(
        max_iterations=iterations,
        accuracy_threshold=threshold if stop_at_threshold else None,
        check_every=per_check,
        evaluate=evaluate,
    )
    report = report if report is not None else RunReport(method)
    engine = run_slr if method == "slr" else run_admm
    engine(objective, plan, engine_config, stop, config, report)
    epochs_used = objective.epoch
    _, masks = hardprune(model, plan)
    accuracy = evaluate_accuracy(model, eval_set)
    outcome = prune_outcome(method, model, plan, masks, accuracy, epochs_used,
                       reached[0] if reached else None)
    report.add_outcome(outcome.to_record())
    return outcome
