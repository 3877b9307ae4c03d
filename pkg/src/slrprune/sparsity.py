"""Cardinality constraints: budgets, projection, masks, compression rate.

"Nonzero" is exact: any value that compares unequal to 0.0 counts, no
matter how small.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _array(x):
    return x.data if hasattr(x, "data") and not isinstance(x, np.ndarray) else np.asarray(x)


def count_nonzero(w):
    return int(np.count_nonzero(_array(w)))


def cardinality_ok(w, budget):
    return count_nonzero(w) <= budget


def project_cardinality(x, budget):
    """Euclidean projection onto ``{z : card(z) <= budget}``.

    Keeps the ``budget`` largest-magnitude entries and zeros the rest. Among
    equal magnitudes the lower flat index is kept.
    """
    x = _array(x)
    if not 0 <= budget <= x.size:
        raise ValueError(f"budget {budget} outside [0, {x.size}]")
    flat = x.ravel()
    out = np.zeros_like(flat)
    if budget:
        keep = np.argsort(-np.abs(flat), kind="stable")[:budget]
        out[keep] = flat[keep]
    out[out == 0] = 0  # write +0.0 for kept negative zeros
    return out.reshape(x.shape)


def mask_from(z):
    return _array(z) != 0


def apply_mask(w, mask):
    """Zero ``w`` outside ``mask``; the result holds +0.0 in pruned slots."""
    w = _array(w)
    return np.where(mask, w, w.dtype.type(0))


@dataclass
class SparsityPlan:
    """Per-layer budgets l_n: the number of nonzero weights allowed."""

    budgets: dict

    @classmethod
    def from_keep_fraction(cls, shapes, keep_fraction, overrides=None):
        """Budget ``ceil(keep_fraction * size)`` for every layer in ``shapes``.

        Args:
            shapes: layer name -> shape (or a model, whose prunable weights
                are used).
            keep_fraction: fraction of weights kept, in [0, 1].
            overrides: optional explicit budgets per layer name.
        """
        if not 0.0 <= keep_fraction <= 1.0:
            raise ValueError(f"keep fraction must lie in [0, 1], got {keep_fraction}")
        if hasattr(shapes, "prunable"):
            shapes = {k: shapes.params[k].shape for k in shapes.prunable}
        budgets = {}
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            budgets[name] = min(size, math.ceil(keep_fraction * size - 1e-9))
        budgets.update(overrides or {})
        plan = cls(budgets)
        plan.validate(shapes)
        return plan

    def validate(self, shapes):
        """Check every budget against its layer; ``shapes`` may be a model."""
        if hasattr(shapes, "prunable"):
            prunable = set(shapes.prunable)
            shapes = {k: shapes.params[k].shape for k in shapes.params}
        else:
            prunable = set(shapes)
        for name, budget in self.budgets.items():
            if name not in shapes:
                raise ValueError(f"layer {name!r} is not in the model")
            if name not in prunable:
                raise ValueError(f"layer {name!r} is not prunable")
            size = int(np.prod(shapes[name]))
            if not 0 <= budget <= size:
                raise ValueError(f"budget for {name!r} must lie in [0, {size}], got {budget}")
        return self

    def feasible(self, layers):
        return all(cardinality_ok(layers[name], b) for name, b in self.budgets.items())

    def project(self, layers):
        return {name: project_cardinality(layers[name], b) for name, b in self.budgets.items()}


def compression_rate(sizes, kept):
    """Total prunable weights over retained nonzeros.

    Args:
        sizes: layer name -> weight count (or array/shape-bearing object).
        kept: layer name -> retained count, boolean mask, or budget.

    Returns:
        ``(overall, per_layer)``; a layer with nothing kept has rate ``inf``.

    Raises:
        ZeroDivisionError: nothing is retained in any layer.
    """
    def _count(v):
        if isinstance(v, (int, np.integer)):
            return int(v)
        return int(np.count_nonzero(_array(v)))

    def _size(v):
        if isinstance(v, (int, np.integer)):
            return int(v)
        if isinstance(v, tuple):
            return int(np.prod(v))
        return int(_array(v).size)

    total = kept_total = 0
    per_layer = {}
    for name, k in kept.items():
        n, c = _size(sizes[name]), _count(k)
        total += n
        kept_total += c
        per_layer[name] = n / c if c else math.inf
    if kept_total == 0:
        raise ZeroDivisionError("compression rate undefined: every budget is zero")
    return total / kept_total, per_layer
