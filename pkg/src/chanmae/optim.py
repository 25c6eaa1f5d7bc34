"""Bias-corrected adaptive-moment (Adam) optimizer over named parameters."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .errors import ContractError, ShapeError


def clip_gradient_norm(params: list[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``;
    returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.trainable:
            g = p.grad
            total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params:
            if p.trainable:
                g = p.grad
                g *= scale
    return norm


class Adam:
    """Standard Adam. Updates run in parameter-list order, which together
    with tape-ordered backward makes training bit-reproducible."""

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr < 0:
            raise ContractError(f"learning rate must be >= 0, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            if not p.trainable:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            arr = p.data
            arr -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
