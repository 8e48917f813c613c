"""Adam with a cosine-annealed learning rate."""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .mlp import ParameterStore


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step rejected")
        self.name = name


def cosine_lr(step: int, total_steps: int, lr0: float = 5e-4) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class Adam:
    """Bias-corrected Adam over a :class:`ParameterStore`.

    ``step`` counts completed updates; the learning rate for update ``i``
    (0-based) is ``cosine_lr(i, total_steps, lr0)``.
    """

    def __init__(self, store: ParameterStore, total_steps: int, lr0: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.total_steps = total_steps
        self.lr0 = lr0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = OrderedDict((k, np.zeros_like(t.data)) for k, t in store.items())
        self.v = OrderedDict((k, np.zeros_like(t.data)) for k, t in store.items())

    def lr(self) -> float:
        return cosine_lr(min(self.step, self.total_steps), self.total_steps, self.lr0)

    def update(self):
        grads = OrderedDict()
        for name, t in self.store.items():
            g = t.grad
            if g is None:
                g = np.zeros_like(t.data)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
            grads[name] = g

        lr = self.lr()
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step
        c2 = 1.0 - b2 ** self.step
        for name, t in self.store.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            t.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(t.data.dtype)
        return lr

    def state(self):
        return {"step": self.step, "m": self.m, "v": self.v}

    def load_state(self, step, m, v):
        self.step = int(step)
        for k in self.m:
            self.m[k] = np.asarray(m[k], dtype=self.m[k].dtype).copy()
            self.v[k] = np.asarray(v[k], dtype=self.v[k].dtype).copy()
