"""First-order optimizers acting in place on named parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OPTIMIZER_KINDS = ("sgd", "momentum", "adam")


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"optimizer kind must be one of {OPTIMIZER_KINDS}, got {self.kind!r}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for name, g in grads.items():
            p = params[name]
            p -= p.dtype.type(self.lr) * g.astype(p.dtype, copy=False)


class Momentum:
    """Heavy-ball SGD: v <- mu v + g, w <- w - lr v."""

    def __init__(self, lr, momentum=0.9):
        self.lr = lr
        self.momentum = momentum
        self.velocity = {}

    def step(self, params, grads):
        for name, g in grads.items():
            p = params[name]
            v = self.velocity.get(name)
            v = g.astype(p.dtype, copy=True) if v is None else p.dtype.type(self.momentum) * v + g
            self.velocity[name] = v
            p -= p.dtype.type(self.lr) * v


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            dt = p.dtype.type
            m = self.m.get(name)
            v = self.v.get(name)
            if m is None:
                m = np.zeros_like(p)
                v = np.zeros_like(p)
            m = dt(self.beta1) * m + dt(1 - self.beta1) * g
            v = dt(self.beta2) * v + dt(1 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            p -= dt(self.lr) * (m / dt(c1)) / (np.sqrt(v / dt(c2)) + dt(self.eps))


def make_optimizer(config):
    if config.kind == "sgd":
        return SGD(config.lr)
    if config.kind == "momentum":
        return Momentum(config.lr, config.momentum)
    return Adam(config.lr, config.beta1, config.beta2, config.eps)


def sgd_step(params, grads, config, optimizer=None):
    """Apply one update to ``params`` in place and return them.

    ``optimizer`` carries momentum/Adam state between calls; a fresh one is
    built from ``config`` when omitted.
    """
    (optimizer or make_optimizer(config)).step(params, grads)
    return params
