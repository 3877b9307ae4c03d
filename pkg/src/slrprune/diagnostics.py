"""Convergence diagnostics: dual overestimates, run reports, heatmaps."""
from __future__ import annotations

import json
import math
import threading
from pathlib import Path

import numpy as np

from .lagrangian import (
    augmented_lagrangian,
    copy_layers,
    solve_cardinality_subproblem,
    solve_loss_subproblem,
)
from .optim import OptimizerConfig, make_optimizer

# Field order of an iteration record in the metrics log.
RECORD_FIELDS = (
    "k", "epoch", "train_loss", "L_rho", "violation", "s", "s_prime", "alpha",
    "soc1", "soc2", "qbar_slr", "qbar_admm", "hardprune_accuracy", "wall_time",
)


def slr_dual_overestimate(gamma, stepsize, violation_sq, lagrangian):
    """``gamma * s * ||W - Z||^2 + L_rho``.

    ``violation_sq`` is the squared global Frobenius norm of W - Z.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return gamma * stepsize * violation_sq + lagrangian


def admm_dual_overestimate(gamma, rho, violation_sq, lagrangian):
    """Same bound with the fixed ADMM penalty ``rho`` in place of ``s``."""
    return slr_dual_overestimate(gamma, rho, violation_sq, lagrangian)


class RunReport:
    """Append-only list of per-iteration records (plain dicts).

    Safe to append from several threads; each append also goes to the
    optional metrics ``sink``.
    """

    def __init__(self, method="slr", sink=None):
        self.method = method
        self.records: list[dict] = []
        self.outcomes: list[dict] = []
        self._sink = sink
        self._lock = threading.Lock()

    def append(self, record):
        with self._lock:
            if self.records and record["k"] <= self.records[-1]["k"]:
                raise ValueError("iteration index must increase strictly")
            if record["violation"] < 0:
                raise ValueError("violation must be non-negative")
            self.records.append(record)
            if self._sink is not None:
                self._sink.write(record)

    def add_outcome(self, outcome):
        with self._lock:
            self.outcomes.append(outcome)
            if self._sink is not None:
                self._sink.write(outcome)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [r.get(name) for r in self.records]

    def soc_trace(self, which="both"):
        """SOC satisfaction per iteration (1/0); ``both`` requires both SOCs."""
        if which == "both":
            return [int(r["soc1"] and r["soc2"]) for r in self.records]
        return [int(r[which]) for r in self.records]

    def kappa(self, which="both"):
        """Last iteration at which a SOC failed (0 when none failed)."""
        failed = [r["k"] for r, ok in zip(self.records, self.soc_trace(which)) if not ok]
        return failed[-1] if failed else 0


def soc_recurs(trace):
    """True when every 0 in ``trace`` is followed later by a 1."""
    last_fail = max((i for i, v in enumerate(trace) if not v), default=-1)
    return last_fail == -1 or any(trace[last_fail + 1:])


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def dumps_record(record):
    return json.dumps({k: _clean(v) for k, v in record.items()}, default=_json_default)


class MetricsSink:
    """Line-delimited JSON writer; one object per line, flushed per record."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")
        self._lock = threading.Lock()

    def write(self, record):
        line = dumps_record(record)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()

    def close(self):
        with self._lock:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_metrics(path):
    """Load a metrics log back into ``(iteration_records, other_records)``."""
    iterations, others = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            (iterations if record.get("type", "iteration") == "iteration" else others).append(record)
    return iterations, others


def estimate_dual_value(objective, Z, Lam, plan, rho, budget, optimizer_config=None, inner_steps=1):
    """Approximate ``q(Lam) = min_{W,Z} L_rho(W, Z, Lam)`` at fixed multipliers.

    Alternates loss-subproblem steps and exact projections for ``budget``
    rounds on a copy of the iterates, then returns the achieved value. The
    objective's parameters are restored afterwards.
    """
    saved = copy_layers(objective.params)
    saved_steps = objective.steps_taken
    try:
        Zc = copy_layers(Z)
        optimizer = make_optimizer(optimizer_config or OptimizerConfig(kind="sgd", lr=0.1))
        for _ in range(budget):
            solve_loss_subproblem(objective, Zc, Lam, rho, optimizer, inner_steps)
            Zc = solve_cardinality_subproblem(objective.params, Lam, rho, plan)
        return augmented_lagrangian(objective.eval_loss(), objective.params, Zc, Lam, rho, plan)
    finally:
        for k, v in saved.items():
            objective.params[k][...] = v
        objective.steps_taken = saved_steps


def export_sparsity_heatmap(layer, path, fmt="%.9g"):
    """Write ``|w|`` as a whitespace-separated matrix (rows = first axis)."""
    arr = np.abs(np.asarray(getattr(layer, "data", layer) if not isinstance(layer, np.ndarray) else layer))
    grid = arr.reshape(arr.shape[0], -1) if arr.ndim != 1 else arr[None, :]
    np.savetxt(path, grid, fmt=fmt)
    return Path(path)


def load_heatmap(path):
    return np.atleast_2d(np.loadtxt(path))
