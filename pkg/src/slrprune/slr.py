"""Surrogate Lagrangian relaxation for cardinality-constrained training.

Each iteration ``k`` runs two coordinated stages:

1. a few SGD steps on ``L_rho(W, Z^{k-1}, Lam^k)``; if the augmented
   Lagrangian strictly decreased, ``Lam' = Lam + s' (W^k - Z^{k-1})``;
2. the exact Z-minimizer ``Z^k = Proj(W^k + Lam'/rho)``; if that strictly
   decreased ``L_rho``, ``Lam = Lam' + s (W^k - Z^k)``.

The stepsizes shrink through ``alpha^k = 1 - 1/(M k^(1 - k^-r))`` scaled by
ratios of constraint-violation norms.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .diagnostics import RunReport, slr_dual_overestimate
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

log = logging.getLogger(__name__)

STAGE2_NUMERATORS = ("previous", "intermediate")
SOC_MODES = ("gate", "always")


@dataclass
class SlrConfig:
    """SLR parameters.

    Attributes:
        rho: quadratic penalty coefficient.
        M, r: stepsize-parameter schedule constants (``M > 1``, ``0 < r < 1``).
        s0: initial stepsize.
        inner_steps: minibatch steps per loss-subproblem solve; ``None``
            means one epoch.
        soc_fail_cap: after this many consecutive failures of the same
            surrogate condition the multiplier update is applied anyway (and
            logged). ``0`` disables the override.
        soc_mode: ``"gate"`` updates multipliers only when the surrogate
            condition holds; ``"always"`` ignores the conditions.
        stage2_numerator: violation norm in the numerator of the second
            stepsize: ``"previous"`` uses ``||W^{k-1} - Z^{k-1}||``,
            ``"intermediate"`` uses ``||W^k - Z^{k-1}||``.
        gamma: weight of the violation term in the dual overestimate.
        stepsize_override: optional ``f(stage, k, computed) -> stepsize`` hook
            for instrumented runs.
        record_wall_time: write wall-clock seconds into each record. Off by
            default so that metrics logs are reproducible byte for byte.
    """

    rho: float = 0.1
    M: float = 300.0
    r: float = 0.1
    s0: float = 1e-2
    inner_steps: Optional[int] = None
    soc_fail_cap: int = 3
    soc_mode: str = "gate"
    stage2_numerator: str = "intermediate"
    gamma: float = 1.0
    stepsize_override: Optional[Callable] = None
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if not self.M > 1:
            raise ValueError(f"M must be > 1, got {self.M}")
        if not 0 < self.r < 1:
            raise ValueError(f"r must lie in (0, 1), got {self.r}")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")
        if self.inner_steps is not None and self.inner_steps < 0:
            raise ValueError("inner_steps must be >= 0")
        if self.soc_fail_cap < 0:
            raise ValueError("soc_fail_cap must be >= 0")
        if self.soc_mode not in SOC_MODES:
            raise ValueError(f"soc_mode must be one of {SOC_MODES}")
        if self.stage2_numerator not in STAGE2_NUMERATORS:
            raise ValueError(f"stage2_numerator must be one of {STAGE2_NUMERATORS}")
        if not 0 <= self.gamma <= 1:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


@dataclass
class StopCriteria:
    """When to stop a coordinator run.

    ``evaluate(W) -> accuracy`` is called every ``check_every`` iterations
    (and after the last one); the run stops once the accuracy reaches
    ``accuracy_threshold``. ``violation_tol`` stops once ``||W - Z||`` falls
    below it.
    """

    max_iterations: int = 1
    accuracy_threshold: Optional[float] = None
    check_every: int = 1
    evaluate: Optional[Callable] = None
    violation_tol: Optional[float] = None

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


@dataclass
class CoordinatorState:
    k: int = 0
    s: float = 0.0
    s_prime: float = 0.0
    alpha: float = 0.0
    prev_violation: float = 0.0
    soc1: Optional[bool] = None
    soc2: Optional[bool] = None
    fail1: int = 0
    fail2: int = 0
    overrides: int = 0
    kappa: int = 0
    reached_at: Optional[int] = None
    stopped_by: str = "budget"


@dataclass
class CoordinatorResult:
    W: dict
    Z: dict
    Lam: dict
    state: CoordinatorState
    report: RunReport


def alpha_schedule(k, M=300.0, r=0.1):
    """``1 - 1 / (M * k^(1 - 1/k^r))`` in float64."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not M > 1:
        raise ValueError(f"M must be > 1, got {M}")
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    k = float(k)
    return 1.0 - 1.0 / (M * k ** (1.0 - 1.0 / k ** r))


def _norm_ratio_step(s_prev, alpha, numerator, denominator):
    if denominator == 0 or numerator == 0:
        return None
    return alpha * s_prev * numerator / denominator


def stepsize_stage1(s_prev, alpha, prev_violation, violation):
    """``s' = alpha * s_prev * ||W^{k-1}-Z^{k-1}|| / ||W^k-Z^{k-1}||``.

    Returns ``None`` when either norm is zero: a zero denominator means the
    constraints already hold and there is nothing to update; a zero
    numerator leaves no scale to carry forward. Callers then skip the
    multiplier update and keep the previous stepsize.
    """
    return _norm_ratio_step(s_prev, alpha, prev_violation, violation)


def stepsize_stage2(s_prime, alpha, numerator_violation, violation):
    """``s = alpha * s' * numerator / ||W^k - Z^k||``; ``None`` as in stage 1."""
    return _norm_ratio_step(s_prime, alpha, numerator_violation, violation)


def update_multipliers_stage1(Lam, s_prime, W, Z_prev):
    return update_multipliers(Lam, s_prime, W, Z_prev)


def update_multipliers_stage2(Lam_prime, s, W, Z):
    return update_multipliers(Lam_prime, s, W, Z)


def surrogate_condition(l_new, l_old):
    return l_new < l_old


def check_soc1(objective, W_new, W_old, Z_prev, Lam, rho):
    """Loss-subproblem condition: ``L(W^k, Z^{k-1}) < L(W^{k-1}, Z^{k-1})``."""
    l_new = augmented_lagrangian(objective.eval_loss(W_new), W_new, Z_prev, Lam, rho)
    l_old = augmented_lagrangian(objective.eval_loss(W_old), W_old, Z_prev, Lam, rho)
    return surrogate_condition(l_new, l_old)


def check_soc2(objective, W, Z_new, Z_prev, Lam_prime, rho):
    """Cardinality-subproblem condition: ``L(W^k, Z^k) < L(W^k, Z^{k-1})``."""
    f = objective.eval_loss(W)
    l_new = augmented_lagrangian(f, W, Z_new, Lam_prime, rho)
    l_old = augmented_lagrangian(f, W, Z_prev, Lam_prime, rho)
    return surrogate_condition(l_new, l_old)


def _inner_steps(config, objective):
    return objective.steps_per_epoch if config.inner_steps is None else config.inner_steps


def _check_finite(W):
    for k, v in W.items():
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"non-finite iterate in {k}")


def run_slr(objective, plan, config=None, stop=None, optimizer=None, report=None, observer=None):
    """Run the SLR coordinator on ``objective`` under ``plan``.

    ``W^0`` is the objective's current parameters, ``Z^0`` their projection
    and ``Lam^0 = 0``. The objective's parameters are updated in place.

    Args:
        objective: a :class:`~slrprune.lagrangian.ModelObjective` or any
            object with the same interface.
        plan: :class:`~slrprune.sparsity.SparsityPlan`.
        config: :class:`SlrConfig`.
        stop: :class:`StopCriteria`; defaults to a single iteration.
        optimizer: optimizer instance or :class:`OptimizerConfig` for the
            loss subproblem.
        report: :class:`RunReport` receiving one record per iteration.
        observer: optional ``f(k, stage, soc, lam_before, lam_after, override)``
            called after each stage; the multiplier dicts are not copied.
    """
    config = config or SlrConfig()
    stop = stop or StopCriteria()
    report = report if report is not None else RunReport("slr")
    if optimizer is None or isinstance(optimizer, OptimizerConfig):
        optimizer = make_optimizer(optimizer or OptimizerConfig())
    rho = config.rho
    W = objective.params
    Z = plan.project(W)
    Lam = {k: np.zeros_like(W[k]) for k in plan.budgets}
    state = CoordinatorState(s=config.s0, s_prime=config.s0, prev_violation=violation_norm(W, Z))
    steps = _inner_steps(config, objective)
    f_prev = objective.eval_loss() if stop.max_iterations else math.nan
    start = time.perf_counter()

    for k in range(1, stop.max_iterations + 1):
        state.k = k
        alpha = alpha_schedule(k, config.M, config.r)
        state.alpha = alpha

        # Stage 1: loss subproblem with Z^{k-1}, Lam^k fixed.
        lam_start = Lam
        W_prev = copy_layers({n: W[n] for n in plan.budgets})
        train_loss, checksum = solve_loss_subproblem(objective, Z, Lam, rho, optimizer, steps)
        _check_finite(W)
        f_new = objective.eval_loss()
        l1_new = augmented_lagrangian(f_new, W, Z, Lam, rho)
        l1_old = augmented_lagrangian(f_prev, W_prev, Z, Lam, rho)
        soc1 = surrogate_condition(l1_new, l1_old)
        violation_mid = violation_norm(W, Z)
        s_prime, updated1, override1 = state.s, False, False
        state.fail1 = 0 if soc1 else state.fail1 + 1
        if config.soc_mode == "always" or soc1 or (config.soc_fail_cap and state.fail1 >= config.soc_fail_cap):
            override1 = not soc1 and config.soc_mode == "gate"
            step = stepsize_stage1(state.s, alpha, state.prev_violation, violation_mid)
            if config.stepsize_override is not None:
                step = config.stepsize_override(1, k, step)
            if step is not None:
                Lam = update_multipliers_stage1(Lam, step, W, Z)
                s_prime, updated1 = step, True
            if override1:
                state.fail1 = 0
                state.overrides += 1
                log.info("iteration %d: SOC-1 failed %d times; updating multipliers anyway",
                         k, config.soc_fail_cap)
        state.s_prime = s_prime
        if observer is not None:
            observer(k, 1, soc1, lam_start, Lam, override1)

        # Stage 2: cardinality subproblem with W^k, Lam' fixed.
        Z_new = solve_cardinality_subproblem(W, Lam, rho, plan)
        if not plan.feasible(Z_new):
            raise InfeasibleError("projection produced an infeasible Z")
        l2_new = augmented_lagrangian(f_new, W, Z_new, Lam, rho)
        l2_old = augmented_lagrangian(f_new, W, Z, Lam, rho)
        soc2 = surrogate_condition(l2_new, l2_old)
        Z = Z_new
        violation = violation_norm(W, Z)
        s, updated2, override2 = s_prime, False, False
        lam_mid = Lam
        state.fail2 = 0 if soc2 else state.fail2 + 1
        if config.soc_mode == "always" or soc2 or (config.soc_fail_cap and state.fail2 >= config.soc_fail_cap):
            override2 = not soc2 and config.soc_mode == "gate"
            numerator = state.prev_violation if config.stage2_numerator == "previous" else violation_mid
            step = stepsize_stage2(s_prime, alpha, numerator, violation)
            if config.stepsize_override is not None:
                step = config.stepsize_override(2, k, step)
            if step is not None:
                Lam = update_multipliers_stage2(Lam, step, W, Z)
                s, updated2 = step, True
            if override2:
                state.fail2 = 0
                state.overrides += 1
                log.info("iteration %d: SOC-2 failed %d times; updating multipliers anyway",
                         k, config.soc_fail_cap)
        if observer is not None:
            observer(k, 2, soc2, lam_mid, Lam, override2)
        for v in Lam.values():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError("non-finite multipliers")

        state.s = s
        state.soc1, state.soc2 = soc1, soc2
        if not (soc1 and soc2):
            state.kappa = k
        state.prev_violation = violation
        f_prev = f_new
        l_rho = augmented_lagrangian(f_new, W, Z, Lam, rho)
        record = {
            "type": "iteration",
            "method": "slr",
            "k": k,
            "epoch": objective.epoch,
            "train_loss": train_loss,
            "L_rho": l_rho,
            "violation": violation,
            "s": s,
            "s_prime": s_prime,
            "alpha": alpha,
            "soc1": soc1,
            "soc2": soc2,
            "qbar_slr": slr_dual_overestimate(config.gamma, s, violation ** 2, l_rho),
            "qbar_admm": None,
            "hardprune_accuracy": None,
            "wall_time": time.perf_counter() - start if config.record_wall_time else None,
            "updated1": updated1,
            "updated2": updated2,
            "override1": override1,
            "override2": override2,
            "batch_checksum": checksum,
        }
        done = _evaluate_and_check(stop, state, record, W, violation, k)
        report.append(record)
        if done:
            break

    return CoordinatorResult(W=W, Z=Z, Lam=Lam, state=state, report=report)


def _evaluate_and_check(stop, state, record, W, violation, k):
    """Fill in periodic accuracy and decide whether to stop after ``k``."""
    last = k == stop.max_iterations
    if stop.evaluate is not None and (k % stop.check_every == 0 or last):
        accuracy = float(stop.evaluate(W))
        record["hardprune_accuracy"] = accuracy
        if stop.accuracy_threshold is not None and accuracy >= stop.accuracy_threshold:
            state.reached_at = k
            state.stopped_by = "accuracy"
            return True
    if stop.violation_tol is not None and violation < stop.violation_tol:
        state.stopped_by = "violation"
        return True
    return False
