"""SGD with momentum, Adam, and the two learning-rate schedules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class Schedule:
    kind: str  # "multistep" | "poly" | "constant"
    base_lr: float
    max_iter: int = 1
    milestones: tuple = ()
    gamma: float = 0.1
    power: float = 0.9


def lr_at(schedule: Schedule, it: int) -> float:
    if schedule.kind == "multistep":
        passed = sum(1 for m in schedule.milestones if it >= m)
        return schedule.base_lr * schedule.gamma ** passed
    if schedule.kind == "poly":
        frac = min(max(it / schedule.max_iter, 0.0), 1.0)
        return schedule.base_lr * (1.0 - frac) ** schedule.power
    if schedule.kind == "constant":
        return schedule.base_lr
    raise ValueError(f"unknown schedule kind {schedule.kind!r}")


def _check(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters vs {len(grads)} gradients")
    for p, g in zip(params, grads):
        if g is not None and np.shape(g) != p.shape:
            raise ShapeError(f"gradient {np.shape(g)} vs parameter {p.shape}")


class SGD:
    def __init__(self, params, lr, momentum=0.9, schedule: Schedule | None = None):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.schedule = schedule
        self.velocity = [np.zeros(p.shape) for p in self.params]
        self.steps = 0

    def step(self, grads=None):
        """v <- momentum * v + g ; p <- p - lr * v. Missing gradients count as zero."""
        grads = [p.grad for p in self.params] if grads is None else list(grads)
        _check(self.params, grads)
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            if g is not None:
                v += g
            p.data -= self.lr * v
        self.steps += 1

    def state_dict(self):
        return {f"v{i}": v.copy() for i, v in enumerate(self.velocity)}


class Adam:
    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, schedule: Schedule | None = None):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.schedule = schedule
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.steps = 0

    def step(self, grads=None):
        grads = [p.grad for p in self.params] if grads is None else list(grads)
        _check(self.params, grads)
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            if g is None:
                g = 0.0
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def set_lr(opt, it):
    """Apply the optimizer's schedule at iteration ``it``."""
    if opt.schedule is not None:
        opt.lr = lr_at(opt.schedule, it)
    return opt.lr

