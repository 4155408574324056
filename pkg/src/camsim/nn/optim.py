"""Adam update and the step learning-rate schedule."""

from __future__ import annotations

import numpy as np

from ..errors import StateError


def adam_step(params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One bias-corrected Adam update, in place, on every parameter."""
    for p in params:
        if p.grad is None:
            raise StateError(f"parameter {p.name!r} has no gradient")
    for p in params:
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * p.grad
        p.v = beta2 * p.v + (1.0 - beta2) * p.grad * p.grad
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def step_lr(base_lr: float, epoch: int, decay: float = 0.1, every: int = 20) -> float:
    """Learning rate after ``epoch`` full epochs: multiplied by ``decay`` every ``every`` epochs."""
    return base_lr * decay ** (epoch // every)
