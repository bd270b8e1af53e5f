"""Central finite-difference gradient checks."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, index, h: float = 1e-5) -> float:
    orig = t.data[index]
    t.data[index] = orig + h
    up = fn().item()
    t.data[index] = orig - h
    down = fn().item()
    t.data[index] = orig
    return (up - down) / (2 * h)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    *,
    h: float = 1e-5,
    max_entries: int = 12,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic and central-difference gradients of ``fn()``.

    At most ``max_entries`` coordinates per tensor are probed.  Returns the
    worst relative error ``|a - n|_2 / max(|a|_2, |n|_2)`` over tensors.
    Tensors whose gradients both fall below the central-difference rounding
    floor (about ``eps * |f| / h`` per coordinate) are skipped, since a
    relative error is meaningless there.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        if t.dtype != np.float64:
            raise TypeError("gradient checks run in 64-bit mode")
        t.grad = None
    loss = fn()
    magnitude = max(1.0, abs(loss.item()))
    backward(loss)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = np.arange(t.data.size)
        if flat.size > max_entries:
            flat = rng.choice(flat, size=max_entries, replace=False)
        idx = [np.unravel_index(i, t.shape) for i in flat]
        a = np.array([analytic[i] for i in idx])
        n = np.array([numeric_grad(fn, t, i, h) for i in idx])
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        floor = 10 * np.finfo(np.float64).eps * magnitude / h * np.sqrt(len(idx))
        if scale < floor:
            continue
        worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
