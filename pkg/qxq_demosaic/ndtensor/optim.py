"""ADAM optimizer over :class:`Parameter` objects."""

from typing import Iterable

import numpy as np

from ..errors import StateError
from .tensor import Parameter


def adam_step(
    params: Iterable[Parameter],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.99,
    eps: float = 1e-8,
):
    """Apply one bias-corrected ADAM update to every parameter, then clear grads.

    Moments and step counts live on the parameters themselves so they are
    checkpointed together with the weights.
    """
    params = list(params)
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise StateError(f"adam_step called before gradients were populated for: {', '.join(missing[:5])}")

    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        p.grad = None


class Adam:
    """Holds ADAM hyperparameters for a fixed parameter list."""

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.99,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
