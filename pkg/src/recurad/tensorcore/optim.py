from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import Parameter, UsageError


class Adam:
    """Bias-corrected Adam. Defaults follow the training setup used for every stage."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = [p for p in params if p.trainable]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def step(self) -> None:
        # unshared ablation blocks deeper than the sampled depth get no gradient
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps, allow_missing=True)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def adam_step(params: Iterable[Parameter], lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8, allow_missing: bool = False) -> None:
    """One Adam update on every parameter, then clear the gradients.

    A parameter that took no part in the loss has no gradient; with
    ``allow_missing`` it is skipped (its step counter does not advance),
    otherwise that is a usage error.
    """
    params = list(params)
    if not allow_missing:
        missing = [p.name or repr(p) for p in params if p.grad is None]
        if missing:
            raise UsageError(f"no gradient for {missing}")
    for p in params:
        if p.grad is None:
            continue
        g = p.grad.astype(p.data.dtype, copy=False)
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)
        p.grad = None
