"""Parameter initialization, Adagrad, and cosine-annealed learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


def xavier_fans(shape) -> tuple[int, int]:
    """fan_in/fan_out for dense (d_in, d_out) and conv (C_out, C_in, kh, kw)."""
    if len(shape) == 2:
        return shape[0], shape[1]
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        return shape[1] * rf, shape[0] * rf
    n = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    return n, shape[0]


def xavier_init(shape, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw in +-sqrt(6 / (fan_in + fan_out))."""
    fan_in, fan_out = xavier_fans(shape)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def cosine_lr(step: int, base_rate: float, min_rate: float, period: int) -> float:
    """min + 0.5 (base - min) (1 + cos(pi step / period)); lies in [min, base]."""
    if period <= 0:
        raise ValueError("period must be positive")
    return min_rate + 0.5 * (base_rate - min_rate) * (1.0 + np.cos(np.pi * step / period))


@dataclass
class Adagrad:
    """Adagrad with per-parameter squared-gradient accumulators.

    The scheduled rate follows cosine annealing over ``period`` steps.
    Accumulators are non-decreasing; a zero gradient leaves its parameter
    untouched.
    """

    params: list[Tensor]
    base_rate: float = 0.05
    min_rate: float = 0.0
    period: int = 500
    eps: float = 1e-10
    step_count: int = 0
    accum: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.accum:
            self.accum = [np.zeros_like(p.data) for p in self.params]

    @property
    def rate(self) -> float:
        return cosine_lr(self.step_count, self.base_rate, self.min_rate, self.period)

    def step(self):
        lr = self.rate
        for p, acc in zip(self.params, self.accum):
            if p.grad is None:
                continue
            acc += p.grad * p.grad
            p.data -= lr * p.grad / (np.sqrt(acc) + self.eps)
        self.step_count += 1
        return lr

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
