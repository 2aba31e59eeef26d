"""Adam optimizer and the warmup/linear-decay learning-rate schedule."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter


@dataclass
class ScheduleConfig:
    """Linear warmup to ``peak_lr`` then linear decay to zero."""

    total_steps: int
    warmup_fraction: float = 0.10
    peak_lr: float = 3e-5

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ValueError("total_steps must be positive")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in (0, 1)")
        if self.peak_lr <= 0.0:
            raise ValueError("peak_lr must be positive")


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Learning rate at ``step``; ramps 0 -> peak over the warmup window,
    then decays peak -> 0 at ``total_steps``."""
    if step > cfg.total_steps:
        warnings.warn(f"lr_at: step {step} beyond total_steps {cfg.total_steps}; clamping to 0")
        return 0.0
    warmup = max(1, round(cfg.warmup_fraction * cfg.total_steps))
    if step <= warmup:
        return cfg.peak_lr * step / warmup
    return cfg.peak_lr * (cfg.total_steps - step) / (cfg.total_steps - warmup)


class Adam:
    """Bias-corrected Adam over a fixed set of parameters."""

    def __init__(
        self,
        params: list[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {lr}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[p.name]
            v = self.v[p.name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= np.asarray(lr * update, dtype=p.data.dtype)

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment tensors keyed for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for name in self.m:
            self.m[name] = np.array(arrays[f"adam.m.{name}"], dtype=self.m[name].dtype)
            self.v[name] = np.array(arrays[f"adam.v.{name}"], dtype=self.v[name].dtype)
        self.t = int(t)
