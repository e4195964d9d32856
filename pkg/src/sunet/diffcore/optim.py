"""Adam optimizer over named parameters."""

from __future__ import annotations

import numpy as np

from .tensor import Param


class Adam:
    """Standard Adam with bias correction; updates are in-place and
    deterministic given the parameter order."""

    def __init__(self, params: list[Param], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.tensor.values) for p in self.params]
        self._v = [np.zeros_like(p.tensor.values) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.tensor.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.tensor.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.tensor.values -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
