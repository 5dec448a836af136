"""Adam optimizer and stepped learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    """lr(iteration) = base_lr * decay_factor ** floor(iteration / decay_every)."""

    base_lr: float = 1.5e-4
    decay_factor: float = 0.5
    decay_every: int = 3000

    def __post_init__(self):
        if not (0.0 < self.decay_factor <= 1.0):
            raise ConfigError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.decay_every <= 0:
            raise ConfigError(f"decay_every must be positive, got {self.decay_every}")

    def at(self, iteration: int) -> float:
        if iteration < 0:
            raise ConfigError(f"iteration must be >= 0, got {iteration}")
        return self.base_lr * self.decay_factor ** (iteration // self.decay_every)


class Adam:
    """Bias-corrected Adam over a named parameter dict.

    Moment buffers are allocated per parameter at construction; the step
    counter advances by one per step() call.  Gradients must be present on
    every parameter when step() runs.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1.5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        """Apply one in-place Adam update using each parameter's .grad."""
        if lr is None:
            lr = self.lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in self.params.items():
            if p.grad is None:
                raise ConfigError(f"adam step: parameter '{name}' has no gradient")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
