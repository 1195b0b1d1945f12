"""Central finite-difference checks for taped functions."""
from __future__ import annotations

from typing import Callable, Iterable, Optional

import numpy as np

from .tensor import Tensor, backward, no_grad


def relative_error(a, b, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - b| / max(|a|, |b|, floor).

    The floor turns the comparison into an absolute one for entries whose
    magnitude is below it, where finite differences are dominated by rounding.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-6,
                   indices: Optional[Iterable] = None) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to the array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def check_gradients(fn: Callable[..., Tensor], inputs: list, step: float = 1e-6,
                    floor: float = 1e-6) -> float:
    """Compare tape gradients of scalar ``fn(*inputs)`` with finite differences.

    Returns the largest elementwise relative error over all inputs that
    require gradients.
    """
    for t in inputs:
        t.zero_grad()
    backward(fn(*inputs))
    worst = 0.0
    for t in inputs:
        if not t.requires_grad:
            continue

        def value():
            with no_grad():
                return float(fn(*inputs).data)

        num = numerical_grad(value, t.data, step)
        worst = max(worst, float(relative_error(t.grad, num, floor).max(initial=0.0)))
    return worst


def probe_loss(out: Tensor, seed: int = 0) -> Tensor:
    """Contract ``out`` with a fixed random tensor so every element matters."""
    from . import ops
    w = np.random.default_rng(seed).standard_normal(out.shape)
    return ops.sum(ops.mul_const(out, w))
