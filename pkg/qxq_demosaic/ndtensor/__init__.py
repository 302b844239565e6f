"""Minimal NumPy tensor core with reverse-mode autodiff and ADAM."""

from .ops import (
    add,
    avg_pool2x,
    bilinear_upsample2x,
    clamp_min,
    concat,
    crop,
    conv2d,
    div,
    leaky_relu,
    mean,
    mse,
    mul,
    pixel_shuffle,
    pixel_unshuffle,
    power,
    reshape,
    sigmoid,
    sub,
    tanh,
)
from .optim import Adam, adam_step
from .tensor import DEFAULT_DTYPE, Parameter, Tensor, backward, no_grad, zero_grad

__all__ = [
    "DEFAULT_DTYPE",
    "Adam",
    "Parameter",
    "Tensor",
    "adam_step",
    "add",
    "avg_pool2x",
    "backward",
    "bilinear_upsample2x",
    "clamp_min",
    "concat",
    "crop",
    "conv2d",
    "div",
    "leaky_relu",
    "mean",
    "mse",
    "mul",
    "no_grad",
    "pixel_shuffle",
    "pixel_unshuffle",
    "power",
    "reshape",
    "sigmoid",
    "sub",
    "tanh",
    "zero_grad",
]
