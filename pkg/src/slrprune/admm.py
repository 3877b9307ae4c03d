"""ADMM baseline on the same W/Z split.

Per iteration: SGD steps on ``L_rho(W, Z^{k-1}, Lam^{k-1})``, then
``Z^k = Proj(W^k + Lam^{k-1}/rho)`` and ``Lam^k = Lam^{k-1} + rho (W^k - Z^k)``.
Multipliers are kept unscaled so reports line up field for field with SLR.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diagnostics import RunReport, admm_dual_overestimate
from .exceptions import InfeasibleError, NonFiniteError
from .lagrangian import (
    augmented_lagrangian,
    copy_layers,
    solve_cardinality_subproblem,
    solve_loss_subproblem,
    update_multipliers,
    violation_norm,
)
from .optim import OptimizerConfig, make_optimizer
from .slr import CoordinatorResult, CoordinatorState, StopCriteria, _evaluate_and_check


@dataclass
class AdmmConfig:
    rho: float = 0.1
    inner_steps: Optional[int] = None
    gamma: float = 1.0
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.inner_steps is not None and self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


def run_admm(objective, plan, config=None, stop=None, optimizer=None, report=None):
    """Run ADMM; same contract and initialization as :func:`~slrprune.slr.run_slr`.

    The surrogate conditions are evaluated and logged for comparison but
    never gate the multiplier update.
    """
    config = config or AdmmConfig()
    stop = stop or StopCriteria()
    report = report if report is not None else RunReport("admm")
    if optimizer is None or isinstance(optimizer, OptimizerConfig):
        optimizer = make_optimizer(optimizer or OptimizerConfig())
    rho = config.rho
    W = objective.params
    Z = plan.project(W)
    Lam = {k: np.zeros_like(W[k]) for k in plan.budgets}
    state = CoordinatorState(s=rho, s_prime=rho, prev_violation=violation_norm(W, Z))
    steps = objective.steps_per_epoch if config.inner_steps is None else config.inner_steps
    f_prev = objective.eval_loss() if stop.max_iterations else math.nan
    start = time.perf_counter()

    for k in range(1, stop.max_iterations + 1):
        state.k = k
        W_prev = copy_layers({n: W[n] for n in plan.budgets})
        train_loss, checksum = solve_loss_subproblem(objective, Z, Lam, rho, optimizer, steps)
        f_new = objective.eval_loss()
        soc1 = (augmented_lagrangian(f_new, W, Z, Lam, rho)
                < augmented_lagrangian(f_prev, W_prev, Z, Lam, rho))

        Z_new = solve_cardinality_subproblem(W, Lam, rho, plan)
        if not plan.feasible(Z_new):
            raise InfeasibleError("projection produced an infeasible Z")
        soc2 = (augmented_lagrangian(f_new, W, Z_new, Lam, rho)
                < augmented_lagrangian(f_new, W, Z, Lam, rho))
        Z = Z_new
        Lam = update_multipliers(Lam, rho, W, Z)
        for v in Lam.values():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError("non-finite multipliers")

        violation = violation_norm(W, Z)
        state.soc1, state.soc2 = soc1, soc2
        if not (soc1 and soc2):
            state.kappa = k
        state.prev_violation = violation
        f_prev = f_new
        l_rho = augmented_lagrangian(f_new, W, Z, Lam, rho)
        record = {
            "type": "iteration",
            "method": "admm",
            "k": k,
            "epoch": objective.epoch,
            "train_loss": train_loss,
            "L_rho": l_rho,
            "violation": violation,
            "s": rho,
            "s_prime": None,
            "alpha": None,
            "soc1": soc1,
            "soc2": soc2,
            "qbar_slr": None,
            "qbar_admm": admm_dual_overestimate(config.gamma, rho, violation ** 2, l_rho),
            "hardprune_accuracy": None,
            "wall_time": time.perf_counter() - start if config.record_wall_time else None,
            "updated1": False,
            "updated2": True,
            "override1": False,
            "override2": False,
            "batch_checksum": checksum,
        }
        done = _evaluate_and_check(stop, state, record, W, violation, k)
        report.append(record)
        if done:
            break

    return CoordinatorResult(W=W, Z=Z, Lam=Lam, state=state, report=report)
