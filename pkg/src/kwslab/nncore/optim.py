"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


class AdamW:
    """Bias-corrected Adam plus weight decay applied directly to the weights.

    The decay step theta <- theta - lr * wd * theta happens before (and
    independently of) the moment-based update, so decay acts even when the
    gradient is exactly zero.
    """

    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.first_moment = {n: np.zeros_like(p.values) for n, p in params.items()}
        self.second_moment = {n: np.zeros_like(p.values) for n, p in params.items()}

    def step(self):
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, param in self.params.items():
            grad = param.grad
            if grad is None:
                continue
            if grad.shape != param.values.shape:
                raise DimensionError(f"grad shape mismatch for {name}")
            if self.weight_decay:
                param.values *= 1.0 - self.lr * self.weight_decay
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / bc1
            v_hat = v / bc2
            param.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None
