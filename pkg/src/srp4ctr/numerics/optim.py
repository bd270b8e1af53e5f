"""Adam with a polynomially decaying learning rate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParameterStore


@dataclass
class OptimizerState:
    lr_initial: float = 1e-3
    lr_end: float = 1e-5
    total_steps: int = 1000
    decay_power: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr_initial < 0 or self.lr_end < 0:
            raise ValueError("learning rates must be non-negative")
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if self.decay_power <= 0:
            raise ValueError("decay_power must be positive")

    def learning_rate(self, t: int | None = None) -> float:
        t = self.step if t is None else t
        if t >= self.total_steps:
            return self.lr_end
        frac = 1.0 - t / self.total_steps
        return (self.lr_initial - self.lr_end) * frac**self.decay_power + self.lr_end

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {"__adam__/step": np.array([self.step], dtype=np.float32)}
        for name, m in self.first_moment.items():
            out[f"__adam__/m/{name}"] = m
            out[f"__adam__/v/{name}"] = self.second_moment[name]
        return out

    def load_arrays(self, arrays) -> None:
        self.step = int(arrays["__adam__/step"][0])
        self.first_moment = {k[len("__adam__/m/"):]: v.copy() for k, v in arrays.items() if k.startswith("__adam__/m/")}
        self.second_moment = {k[len("__adam__/v/"):]: v.copy() for k, v in arrays.items() if k.startswith("__adam__/v/")}


def adam_step(state: OptimizerState, params: ParameterStore) -> float:
    """Apply one bias-corrected Adam update, advance the step and clear gradients.

    Returns the learning rate that was used.  Parameters without a gradient are
    skipped and get no moment buffers.
    """
    lr = state.learning_rate()
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.unique():
        g = p.grad
        if g is None:
            continue
        m = state.first_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.second_moment[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.first_moment[name] = m.astype(p.dtype, copy=False)
        state.second_moment[name] = v.astype(p.dtype, copy=False)
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        p.data = (p.data - update).astype(p.dtype, copy=False)
    state.step = t
    params.zero_grad()
    return lr
