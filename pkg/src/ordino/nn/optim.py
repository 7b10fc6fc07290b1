"""Adam with global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from ..errors import NonFiniteGradient
from .params import ParameterStore


def clip_global_norm(store: ParameterStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    total = 0.0
    for p in store:
        total += float(np.sum(p.grad * p.grad))
    norm = math.sqrt(total)
    if max_norm is not None and norm > max_norm > 0:
        scale = max_norm / norm
        for p in store:
            p.grad *= scale
    return norm


class Adam:
    """Adam over a ParameterStore; clips the global gradient norm first.

    The clip threshold default follows the training recipe verbatim; it is
    deliberately a constructor argument so experiments can override it.
    """

    def __init__(
        self,
        store: ParameterStore,
        lr: float = 1e-4,
        clip: float | None = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.store = store
        self.lr = lr
        self.clip = clip
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self) -> None:
        self.store.zero_grads()

    def step(self) -> float:
        """Apply one update; returns the pre-clip gradient norm."""
        for p in self.store:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradient(f"non-finite gradient in {p.name}")
        norm = clip_global_norm(self.store, self.clip)
        for p in self.store:
            p.step_count += 1
            p.adam_m *= self.beta1
            p.adam_m += (1.0 - self.beta1) * p.grad
            p.adam_v *= self.beta2
            p.adam_v += (1.0 - self.beta2) * (p.grad * p.grad)
            m_hat = p.adam_m / (1.0 - self.beta1**p.step_count)
            v_hat = p.adam_v / (1.0 - self.beta2**p.step_count)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if not np.all(np.isfinite(p.value)):
                raise NonFiniteGradient(f"non-finite value in {p.name} after step")
        return norm
