"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""
import math

import numpy as np

from ..errors import StateError


def cosine_lr(step, total_steps, base_lr, min_lr=0.0, warmup_steps=0):
    """Learning rate at ``step``: base at step 0 (after warmup), ``min_lr`` at ``total_steps``."""
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, max(0.0, (step - warmup_steps) / span))
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam moments with weight decay applied directly to the weights.

    ``lr_scale`` maps a parameter name to a multiplier on the step size,
    which is how parameter groups with smaller learning rates are expressed.
    Frozen parameters are never touched, whatever their grad holds.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
                 lr_scale=None):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.lr_scale = dict(lr_scale or {})
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        live = [p for p in self.params if not p.frozen]
        for p in live:
            if p.grad is None:
                raise StateError(f"parameter {p.name!r} has no gradient")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p in live:
            key = id(p)
            if key not in self.m:
                self.m[key] = np.zeros_like(p.data)
                self.v[key] = np.zeros_like(p.data)
            m, v = self.m[key], self.v[key]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            step_lr = lr * self.lr_scale.get(p.name, 1.0)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data * (1.0 - step_lr * self.weight_decay) - step_lr * update

    def zero_grad(self):
        for p in self.params:
            p.grad = None

