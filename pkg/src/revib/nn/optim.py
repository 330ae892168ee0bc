from __future__ import annotations

import numpy as np

from .layers import ParamStore
from .tensor import DimensionError


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              m: dict[str, np.ndarray], v: dict[str, np.ndarray],
              lr: float, beta1: float, beta2: float, eps: float, t: int) -> None:
    """Bias-corrected adaptive-moment update, applied to ``params`` in place."""
    if t < 1:
        raise ValueError("adam step counter t must be >= 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"{name}: grad {g.shape} vs param {p.shape}")
        m[name] *= beta1
        m[name] += (1.0 - beta1) * g
        v[name] *= beta2
        v[name] += (1.0 - beta2) * g * g
        p -= lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)


class Adam:
    def __init__(self, store: ParamStore, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in store}
        self.v = {n: np.zeros_like(p.data) for n, p in store}

    def step(self) -> None:
        self.t += 1
        adam_step(self.store.state(), self.store.grads(), self.m, self.v,
                  self.lr, self.beta1, self.beta2, self.eps, self.t)
