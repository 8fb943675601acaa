import math

import numpy as np

from ..errors import DimensionError


class AdamState:
    """Adam moments for a fixed list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads, lr=None):
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise DimensionError("parameter/gradient list length does not match optimizer state")
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        step = lr * math.sqrt(c2) / c1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= step * m / (np.sqrt(v) + self.eps * math.sqrt(c2))
        return params


def adam_step(state, params, grads):
    return state.step(params, grads)


def cosine_lr(base, it, total, floor=0.0):
    """Cosine decay from ``base`` to ``floor * base`` over ``total`` iterations."""
    if total <= 1:
        return base
    frac = min(it / (total - 1), 1.0)
    return base * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))
