"""Central finite-difference gradient checking."""

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], tensor: Tensor, h: float = 1e-3) -> np.ndarray:
    """d fn() / d tensor by central differences, perturbing ``tensor.data`` in place."""
    tensor.data = np.ascontiguousarray(tensor.data)
    grad = np.zeros_like(tensor.data, dtype=np.float64)
    flat = tensor.data.reshape(-1)
    for index in range(flat.size):
        original = flat[index]
        flat[index] = original + h
        plus = fn().item()
        flat[index] = original - h
        minus = fn().item()
        flat[index] = original
        grad.reshape(-1)[index] = (plus - minus) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-3) -> float:
    """Largest relative error between autodiff and finite-difference gradients.

    ``tensors`` must be float64 leaves with ``requires_grad=True``.
    """
    for t in tensors:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(analytic, numerical_grad(fn, t, h)))
    return worst
