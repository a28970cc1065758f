"""AdamW with decoupled weight decay."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import NumericError, Parameter


def adamw_step(
    params: Iterable[Parameter],
    lr: float,
    step: int,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One in-place AdamW update; ``step`` is the 1-based update count used for
    bias correction. Gradients are zeroed afterwards."""
    params = list(params)
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    corr1 = 1.0 - beta1**step
    corr2 = 1.0 - beta2**step
    for p in params:
        g = p.grad
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        m_hat = p.m / corr1
        v_hat = p.v / corr2
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        p.zero_grad()


class AdamW:
    def __init__(self, params, betas=(0.9, 0.98), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        adamw_step(
            self.params,
            lr,
            self.t,
            beta1=self.betas[0],
            beta2=self.betas[1],
            eps=self.eps,
            weight_decay=self.weight_decay,
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
