"""Differentiable operations over Tensors.

Every op performs the forward computation in numpy and registers a
vector-Jacobian-product closure for the backward pass. Convolution is
cross-correlation (no kernel flip), the deep-learning convention.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, from_op


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape:
        return
    for axis, (da, db) in enumerate(zip(a.shape, b.shape)):
        if da != db:
            raise ShapeError(f"{op}: axis {axis} disagrees ({da} vs {db})")
    raise ShapeError(f"{op}: rank mismatch ({a.shape} vs {b.shape})")


def _binary_operands(op: str, a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.size != 1 and b.size != 1:
        _same_shape(op, a, b)
    return a, b


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to a size-1 operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    return np.sum(grad).reshape(shape) * np.ones(shape)


# -- elementwise arithmetic --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _binary_operands("add", a, b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return from_op(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _binary_operands("sub", a, b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return from_op(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _binary_operands("mul", a, b)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return from_op(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _binary_operands("div", a, b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return from_op(out, (a, b), vjp)


def pow(x, exponent: float) -> Tensor:  # noqa: A001 - mirrors the operator
    x = as_tensor(x)
    p = float(exponent)
    out = x.data**p

    def vjp(g):
        return (g * p * x.data ** (p - 1.0),)

    return from_op(out, (x,), vjp)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)

    def vjp(g):
        return (g / x.data,)

    return from_op(out, (x,), vjp)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)

    def vjp(g):
        return (g * out,)

    return from_op(out, (x,), vjp)


def abs(x) -> Tensor:  # noqa: A001 - mirrors the builtin
    x = as_tensor(x)
    out = np.abs(x.data)

    def vjp(g):
        return (g * np.sign(x.data),)

    return from_op(out, (x,), vjp)


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is zero where the clamp is active."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def vjp(g):
        return (g * inside,)

    return from_op(out, (x,), vjp)


# -- activations ---------------------------------------------------------------


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def vjp(g):
        return (g * (x.data > 0.0),)

    return from_op(out, (x,), vjp)


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    out = np.where(x.data > 0.0, x.data, slope * x.data)

    def vjp(g):
        return (g * np.where(x.data > 0.0, 1.0, slope),)

    return from_op(out, (x,), vjp)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return from_op(out, (x,), vjp)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return from_op(out, (x,), vjp)


# -- reductions and shape ops ----------------------------------------------


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return from_op(out, (x,), vjp)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _normalize_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = np.mean(x.data, axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return from_op(out, (x,), vjp)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return from_op(out, (x,), vjp)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i] : offsets[i + 1]], 0, axis)
            for i in range(len(tensors))
        )

    return from_op(out, tuple(tensors), vjp)


# -- linear algebra -----------------------------------------------------------


def linear(x, weight, bias=None) -> Tensor:
    """Affine map: (N, D) @ (D, E) + (E,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(
            f"linear: expected 2-D input and weight, got {x.shape} and {weight.shape}"
        )
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear: input features {x.shape[1]} != weight rows {weight.shape[0]}"
        )
    out = x.data @ weight.data
    if bias is None:
        def vjp(g):
            return g @ weight.data.T, x.data.T @ g

        return from_op(out, (x, weight), vjp)

    bias = as_tensor(bias)
    if bias.shape != (weight.shape[1],):
        raise ShapeError(
            f"linear: bias length {bias.shape} != output features {weight.shape[1]}"
        )
    out = out + bias.data

    def vjp(g):
        return g @ weight.data.T, x.data.T @ g, g.sum(axis=0)

    return from_op(out, (x, weight, bias), vjp)


# -- convolution ---------------------------------------------------------------


def _im2col_view(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Strided (N, C, KH, KW, OH, OW) window view of a padded NCHW array."""
    n, c, hp, wp = xp.shape
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def _conv_forward(xp: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    windows = _im2col_view(xp, kernel.shape[2], kernel.shape[3], stride)
    return np.einsum("ncpqij,ocpq->noij", windows, kernel, optimize=True)


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of an NCHW input with an OIKK kernel.

    Output spatial size is floor((H + 2*padding - K) / stride) + 1. Gradients
    are defined with respect to both the input and the kernel.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4:
        raise ShapeError(f"conv2d: input must be NCHW, got rank {x.ndim}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be OIKK, got rank {kernel.ndim}")
    n, c, h, w = x.shape
    o, i, kh, kw = kernel.shape
    if c != i:
        raise ShapeError(f"conv2d: input channels {c} != kernel input channels {i}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: spatial size {h}x{w} too small for kernel {kh}x{kw}"
            f" with padding {padding}"
        )

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = _conv_forward(xp, kernel.data, stride)
    oh, ow = out.shape[2], out.shape[3]

    def vjp(g):
        gk = None
        gx = None
        if kernel.requires_grad:
            windows = _im2col_view(xp, kh, kw, stride)
            gk = np.einsum("noij,ncpqij->ocpq", g, windows, optimize=True)
        if x.requires_grad:
            # dL/dx is conv_transpose(g, kernel): dilate g by the stride,
            # pad by K-1, correlate with the flipped/transposed kernel.
            gd = np.zeros((n, o, (oh - 1) * stride + 1, (ow - 1) * stride + 1))
            gd[:, :, ::stride, ::stride] = g
            gdp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            kt = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            full = _conv_forward(gdp, kt, 1)
            gxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
            gxp[:, :, : full.shape[2], : full.shape[3]] = full
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        return gx, gk

    return from_op(out, (x, kernel), vjp)


def add_channel_bias(x, bias) -> Tensor:
    """Add a per-channel bias (C,) to an NCHW map."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.shape != (x.shape[1],):
        raise ShapeError(
            f"add_channel_bias: bias length {bias.shape} != channels {x.shape[1]}"
        )
    out = x.data + bias.data[None, :, None, None]

    def vjp(g):
        return g, g.sum(axis=(0, 2, 3))

    return from_op(out, (x, bias), vjp)


def channel_affine(x, scale, bias) -> Tensor:
    """Per-channel scale and shift of an NCHW map."""
    x, scale, bias = as_tensor(x), as_tensor(scale), as_tensor(bias)
    if scale.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"channel_affine: scale/bias must have length {x.shape[1]},"
            f" got {scale.shape} and {bias.shape}"
        )
    out = x.data * scale.data[None, :, None, None] + bias.data[None, :, None, None]

    def vjp(g):
        gx = g * scale.data[None, :, None, None]
        gs = np.einsum("nchw,nchw->c", g, x.data)
        gb = g.sum(axis=(0, 2, 3))
        return gx, gs, gb

    return from_op(out, (x, scale, bias), vjp)


# -- structural ops -----------------------------------------------------------


def _lerp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-interpolation matrix for half-pixel-aligned bilinear resizing."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        i0 = int(np.floor(src))
        frac = src - i0
        i0c = min(max(i0, 0), n_in - 1)
        i1c = min(max(i0 + 1, 0), n_in - 1)
        m[i, i0c] += 1.0 - frac
        m[i, i1c] += frac
    return m


def bilinear_upsample(x) -> Tensor:
    """Double the spatial size of an NCHW map with bilinear interpolation."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"bilinear_upsample: input must be NCHW, got rank {x.ndim}")
    n, c, h, w = x.shape
    wr = _lerp_matrix(2 * h, h)
    wc = _lerp_matrix(2 * w, w)
    out = np.einsum("ij,ncjk,lk->ncil", wr, x.data, wc, optimize=True)

    def vjp(g):
        return (np.einsum("ij,ncil,lk->ncjk", wr, g, wc, optimize=True),)

    return from_op(out, (x,), vjp)


def global_avg_pool(x) -> Tensor:
    """Spatial mean of an NCHW map, yielding (N, C)."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool: input must be NCHW, got rank {x.ndim}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return from_op(out, (x,), vjp)


def avg_pool2x2(x) -> Tensor:
    """2x2 average pooling with stride 2 over an NCHW map."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2x2: spatial size {h}x{w} must be even")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def vjp(g):
        gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0
        return (gx,)

    return from_op(out, (x,), vjp)


def tile_spatial(vec, height: int, width: int) -> Tensor:
    """Tile a vector (C,) or batch of vectors (N, C) into constant spatial maps."""
    vec = as_tensor(vec)
    if vec.ndim not in (1, 2):
        raise ShapeError(f"tile_spatial: expected (C,) or (N, C), got {vec.shape}")
    expanded = vec.data[..., None, None]
    out = np.broadcast_to(expanded, vec.shape + (height, width)).copy()

    def vjp(g):
        return (g.sum(axis=(-2, -1)),)

    return from_op(out, (vec,), vjp)
