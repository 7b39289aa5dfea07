"""Adam with bias correction."""
from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Param


def adam_step(params: Iterable[Param], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """Apply one Adam update to every parameter and clear the gradients.

    Parameters without a gradient are treated as having a zero gradient, so
    their step counter still advances. A non-finite gradient anywhere aborts
    the whole step before any parameter moves.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    params = list(params)
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in parameter {p.name!r}; step aborted")
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step_count += 1
        t = p.step_count
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** t)
        v_hat = p.v / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None
