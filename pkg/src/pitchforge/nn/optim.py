"""Named parameter collections and the Adam update."""
from __future__ import annotations

import numpy as np

from .autodiff import ValueArray


class GradientError(RuntimeError):
    """Non-finite gradient or loss; training must stop with diagnostics."""


class ParameterSet:
    """Ordered name -> ValueArray mapping with per-parameter Adam state."""

    def __init__(self):
        self.params: dict[str, ValueArray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step: int = 0

    def add(self, name: str, value: ValueArray) -> ValueArray:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params[name] = value
        self.adam_m[name] = np.zeros_like(value.data)
        self.adam_v[name] = np.zeros_like(value.data)
        return value

    def add_group(self, prefix: str, group: dict) -> dict:
        for key, value in group.items():
            self.add(f"{prefix}.{key}", value)
        return group

    def __getitem__(self, name: str) -> ValueArray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_values(self) -> int:
        return sum(p.data.size for p in self.params.values())


def adam_step(
    params: ParameterSet,
    lr: float = 1e-3,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam over every parameter; gradients are zeroed after."""
    b1, b2 = betas
    params.step += 1
    t = params.step
    for name, p in params.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in {name!r} at step {t}")
        m = params.adam_m[name]
        v = params.adam_v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grad()
