"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ovdet.nn.tensor import Tensor


def numerical_gradient(fn: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """d fn / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = fn()
        flat_x[i] = orig - h
        down = fn()
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2.0 * h)
    return grad


def gradcheck(fn: Callable[..., Tensor], *arrays: np.ndarray, h: float = 1e-6) -> float:
    """Compare reverse-mode gradients of a scalar-valued ``fn`` against
    central finite differences for each input array. Returns the worst
    relative error max|a-n| / max(max|a|, max|n|, 1e-12) over all inputs.
    """
    tensors = [Tensor(np.asarray(a, dtype=np.float64).copy(), requires_grad=True)
               for a in arrays]
    out = fn(*tensors)
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]

    def evaluate() -> float:
        return fn(*tensors).item()

    worst = 0.0
    for t, ana in zip(tensors, analytic):
        num = numerical_gradient(evaluate, t.data, h=h)
        scale = max(np.abs(ana).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-12)
        worst = max(worst, float(np.abs(ana - num).max(initial=0.0) / scale))
    return worst
