"""Adam with decoupled weight decay and a warmup / linear-decay schedule."""

from __future__ import annotations

import numpy as np


def warmup_linear(step: int, base_lr: float, warmup: int, total: int) -> float:
    """Linear ramp to base_lr over ``warmup`` steps, then linear decay to 0."""
    if total <= 0:
        return base_lr
    if warmup > 0 and step < warmup:
        return base_lr * (step + 1) / warmup
    if total <= warmup:
        return base_lr
    return base_lr * max(0.0, (total - step) / (total - warmup))


class AdamW:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01,
                 warmup: int = 100, total_steps: int = 0,
                 grad_clip: float = 0.0):
        self.params = list(params)
        self.base_lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup = warmup
        self.total_steps = total_steps
        self.grad_clip = grad_clip
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self) -> float:
        return warmup_linear(self.t, self.base_lr, self.warmup, self.total_steps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        lr = self.lr
        b1, b2 = self.betas
        if self.grad_clip > 0.0:
            total = 0.0
            for p in self.params:
                if p.grad is not None:
                    total += float((p.grad * p.grad).sum())
            norm = total ** 0.5
            if norm > self.grad_clip:
                scale = self.grad_clip / norm
                for p in self.params:
                    if p.grad is not None:
                        p.grad *= scale
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= lr * (update + self.weight_decay * p.data)
