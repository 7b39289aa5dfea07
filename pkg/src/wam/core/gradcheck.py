"""Central finite-difference gradient checks for ops built on :mod:`wam.core`."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
                    projection_seed: int = 0) -> list[float]:
    """Compare backward() against central differences for every input.

    ``fn`` recomputes the op from the current contents of ``inputs``; its
    output is reduced to a scalar by a fixed random projection. Returns one
    relative error per input.
    """
    out = fn()
    proj = np.random.default_rng(projection_seed).standard_normal(out.shape)
    for t in inputs:
        t.grad = None
    out.backward(proj.astype(out.data.dtype))
    errors = []
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = float((fn().data * proj).sum())
            flat[i] = orig - h
            minus = float((fn().data * proj).sum())
            flat[i] = orig
            numeric.reshape(-1)[i] = (plus - minus) / (2 * h)
        errors.append(relative_error(analytic, numeric))
    return errors
