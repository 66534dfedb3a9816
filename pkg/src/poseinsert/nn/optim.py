from __future__ import annotations

import numpy as np

from .params import ParamStore


class AdamW:
    """Adam with decoupled weight decay, updating a ParamStore in place."""

    def __init__(self, params: ParamStore, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros_like(params.flat)
        self.v = np.zeros_like(params.flat)
        self.t = 0
        self._a = np.empty_like(params.flat)
        self._b = np.empty_like(params.flat)

    def step(self, grad: np.ndarray, lr: float | None = None):
        lr = self.lr if lr is None else lr
        self.t += 1
        a, b = self._a, self._b  # scratch, to keep big temporaries out of the hot loop
        np.multiply(grad, 1 - self.b1, out=a)
        self.m *= self.b1
        self.m += a
        np.multiply(grad, 1 - self.b2, out=a)
        a *= grad
        self.v *= self.b2
        self.v += a
        flat = self.params.flat
        if lr != 0.0:
            np.divide(self.v, 1 - self.b2**self.t, out=b)
            np.sqrt(b, out=b)
            b += self.eps
            np.divide(self.m, 1 - self.b1**self.t, out=a)
            a /= b
            a *= lr
            flat *= 1.0 - lr * self.weight_decay
            flat -= a
        self.params.version += 1

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": self.t}


def cosine_lr(base: float, step: int, total: int, warmup: int = 0) -> float:
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    if total <= warmup:
        return base
    frac = (step - warmup) / max(total - warmup, 1)
    return 0.5 * base * (1.0 + np.cos(np.pi * min(frac, 1.0)))
