"""Differentiable ops over :class:`Tensor`.

Every op computes its forward with NumPy and registers a closure mapping the
output gradient to one gradient per input (``None`` for non-differentiable
inputs).
"""

from typing import Optional, Sequence

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after NumPy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_operands(x, y) -> tuple[Tensor, Tensor]:
    if not isinstance(x, Tensor) and not isinstance(y, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    x = as_tensor(x, like=y if isinstance(y, Tensor) else None)
    y = as_tensor(y, like=x)
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise ShapeError(f"operands with shapes {x.shape} and {y.shape} do not broadcast") from None
    return x, y


# Elementwise arithmetic


def add(x, y) -> Tensor:
    x, y = _binary_operands(x, y)

    def backward_fn(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return make_node(x.data + y.data, (x, y), backward_fn, "add")


def sub(x, y) -> Tensor:
    x, y = _binary_operands(x, y)

    def backward_fn(g):
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return make_node(x.data - y.data, (x, y), backward_fn, "sub")


def mul(x, y) -> Tensor:
    x, y = _binary_operands(x, y)

    def backward_fn(g):
        return _unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)

    return make_node(x.data * y.data, (x, y), backward_fn, "mul")


def div(x, y) -> Tensor:
    x, y = _binary_operands(x, y)
    out = x.data / y.data

    def backward_fn(g):
        return _unbroadcast(g / y.data, x.shape), _unbroadcast(-g * out / y.data, y.shape)

    return make_node(out, (x, y), backward_fn, "div")


def power(x: Tensor, exponent: float) -> Tensor:
    out = x.data**exponent

    def backward_fn(g):
        return (g * exponent * x.data ** (exponent - 1),)

    return make_node(out, (x,), backward_fn, "pow")


def clamp_min(x: Tensor, low: float) -> Tensor:
    mask = x.data > low
    out = np.where(mask, x.data, np.asarray(low, dtype=x.dtype))

    def backward_fn(g):
        return (g * mask,)

    return make_node(out, (x,), backward_fn, "clamp_min")


# Activations


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    positive = x.data > 0
    out = np.where(positive, x.data, x.data * x.dtype.type(slope))

    def backward_fn(g):
        return (np.where(positive, g, g * x.dtype.type(slope)),)

    return make_node(out, (x,), backward_fn, "leaky_relu")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward_fn(g):
        return (g * (1 - out * out),)

    return make_node(out, (x,), backward_fn, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form avoids exp overflow for large negative inputs
    out = 0.5 * (np.tanh(0.5 * x.data) + 1)

    def backward_fn(g):
        return (g * out * (1 - out),)

    return make_node(out, (x,), backward_fn, "sigmoid")


# Reductions and losses


def mean(x: Tensor) -> Tensor:
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def backward_fn(g):
        return (np.full(x.shape, g / x.data.size, dtype=x.dtype),)

    return make_node(out, (x,), backward_fn, "mean")


def mse(x: Tensor, y: Tensor) -> Tensor:
    """Mean squared error over all elements."""
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise ShapeError(f"mse operands differ in shape: {x.shape} vs {y.shape}")
    diff = x.data - y.data
    out = np.asarray(np.mean(diff * diff), dtype=diff.dtype)

    def backward_fn(g):
        gx = (2.0 / diff.size) * g * diff
        return gx, -gx

    return make_node(out, (x, y), backward_fn, "mse")


# Structural ops


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not xs:
        raise ShapeError("concat needs at least one tensor")
    reference = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(reference) or any(
            a != b for i, (a, b) in enumerate(zip(x.shape, reference)) if i != axis
        ):
            raise ShapeError(f"cannot concat shapes {reference} and {x.shape} on axis {axis}")
    sizes = [x.shape[axis] for x in xs]
    out = np.concatenate([x.data for x in xs], axis=axis)

    def backward_fn(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return make_node(out, tuple(xs), backward_fn, "concat")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None

    def backward_fn(g):
        return (g.reshape(x.shape),)

    return make_node(out, (x,), backward_fn, "reshape")


def _shuffle(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    out_c = c // (r * r)
    return data.reshape(n, out_c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, out_c, h * r, w * r)


def _unshuffle(data: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = data.shape
    return data.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)


def pixel_shuffle(x: Tensor, r: int = 2) -> Tensor:
    """(N, C*r^2, H, W) -> (N, C, rH, rW) with out[n, c, r*i+a, r*j+b] = in[n, c*r^2+a*r+b, i, j]."""
    if x.ndim != 4 or x.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle needs channels divisible by {r * r}, got shape {x.shape}")

    def backward_fn(g):
        return (_unshuffle(g, r),)

    return make_node(np.ascontiguousarray(_shuffle(x.data, r)), (x,), backward_fn, "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int = 2) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    if x.ndim != 4 or x.shape[2] % r or x.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle needs H and W divisible by {r}, got shape {x.shape}")

    def backward_fn(g):
        return (_shuffle(g, r),)

    return make_node(np.ascontiguousarray(_unshuffle(x.data, r)), (x,), backward_fn, "pixel_unshuffle")


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    """Linear map of a length-n signal to 2n samples (half-pixel centers, edge clamp)."""
    matrix = np.zeros((2 * n, n), dtype=np.float64)
    for o in range(2 * n):
        src = max((o + 0.5) / 2.0 - 0.5, 0.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n - 1)
        frac = src - i0
        matrix[o, i0] += 1.0 - frac
        matrix[o, i1] += frac
    return matrix.astype(dtype)


def bilinear_upsample2x(x: Tensor) -> Tensor:
    """Bilinear 2x upsampling with align_corners=False semantics."""
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample2x expects (N, C, H, W), got {x.shape}")
    uh = _upsample_matrix(x.shape[2], x.dtype)
    uw = _upsample_matrix(x.shape[3], x.dtype)
    out = uh @ x.data @ uw.T

    def backward_fn(g):
        return (uh.T @ g @ uw,)

    return make_node(out, (x,), backward_fn, "bilinear_upsample2x")


def avg_pool2x(x: Tensor) -> Tensor:
    """2x2 box average."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x needs even H and W, got {x.shape}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward_fn(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.dtype.type(0.25),)

    return make_node(out, (x,), backward_fn, "avg_pool2x")


# Convolution


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation of (N, Cin, H, W) with a (Cout, Cin, k, k) kernel.

    Accumulates one ``tensordot`` per kernel offset, which keeps memory at the
    size of the output rather than an im2col matrix.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, kcin, kh, kw = w.shape
    if kcin != cin:
        raise ShapeError(f"conv2d input {x.shape} does not match kernel {w.shape}")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d bias {b.shape} does not match kernel {w.shape}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(wd, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {w.shape} with padding {padding} does not fit input {x.shape}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    rows = [slice(i, i + stride * (ho - 1) + 1, stride) for i in range(kh)]
    cols = [slice(j, j + stride * (wo - 1) + 1, stride) for j in range(kw)]

    acc = np.zeros((cout, n, ho, wo), dtype=np.result_type(x.dtype, w.dtype))
    for i in range(kh):
        for j in range(kw):
            acc += np.tensordot(w.data[:, :, i, j], xp[:, :, rows[i], cols[j]], axes=([1], [1]))
    out = np.ascontiguousarray(acc.transpose(1, 0, 2, 3))
    if b is not None:
        out += b.data.reshape(1, cout, 1, 1)

    def backward_fn(g):
        gt = g.transpose(1, 0, 2, 3)
        gx = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if gw is not None:
                    gw[:, :, i, j] = np.tensordot(gt, xp[:, :, rows[i], cols[j]], axes=([1, 2, 3], [0, 2, 3]))
                if gx is not None:
                    gx[:, :, rows[i], cols[j]] += np.tensordot(w.data[:, :, i, j], gt, axes=([0], [0])).transpose(1, 0, 2, 3)
        if gx is not None and padding:
            gx = gx[:, :, padding:-padding, padding:-padding]
        gb = g.sum(axis=(0, 2, 3)) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, lambda g: backward_fn(g)[: len(parents)], "conv2d")


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Spatial window of an (N, C, H, W) tensor."""
    if top < 0 or left < 0 or top + height > x.shape[2] or left + width > x.shape[3]:
        raise ShapeError(f"crop ({top}, {left}, {height}, {width}) falls outside {x.shape}")
    out = np.ascontiguousarray(x.data[:, :, top : top + height, left : left + width])

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[:, :, top : top + height, left : left + width] = g
        return (gx,)

    return make_node(out, (x,), backward_fn, "crop")
