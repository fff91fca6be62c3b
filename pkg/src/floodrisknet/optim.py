from __future__ import annotations

from collections.abc import Iterable

import numpy as np

from .autodiff import Parameter
from .errors import NumericalError


def adam_update(p: Parameter, lr: float = 1e-3, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8) -> Parameter:
    """One bias-corrected Adam step on ``p`` in place (also returned)."""
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    g = p.grad
    if g.shape != p.value.shape:
        raise ValueError(f"gradient shape {g.shape} != value shape {p.value.shape}")
    p.step += 1
    p.m = beta1 * p.m + (1.0 - beta1) * g
    p.v = beta2 * p.v + (1.0 - beta2) * g * g
    m_hat = p.m / (1.0 - beta1 ** p.step)
    v_hat = p.v / (1.0 - beta2 ** p.step)
    p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(p.value)):
        raise NumericalError(f"parameter {p.name or '?'} became non-finite")
    return p


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            adam_update(p, self.lr, self.beta1, self.beta2, self.eps)
