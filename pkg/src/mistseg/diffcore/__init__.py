"""Reverse-mode differentiable computation over dense float64 tensors."""

from . import nn, ops
from .ops import (
    abs,
    add,
    add_channel_bias,
    avg_pool2x2,
    bilinear_upsample,
    channel_affine,
    clip,
    concat,
    conv2d,
    div,
    exp,
    global_avg_pool,
    leaky_relu,
    linear,
    log,
    mean,
    mul,
    pow,
    relu,
    reshape,
    sigmoid,
    sub,
    sum,
    tanh,
    tile_spatial,
)
from .optim import Adam, adam_state, adam_step
from .tensor import ShapeError, Tensor, as_tensor, backward, build_tape, from_op

__all__ = [
    "Adam",
    "ShapeError",
    "Tensor",
    "abs",
    "adam_state",
    "adam_step",
    "add",
    "add_channel_bias",
    "as_tensor",
    "avg_pool2x2",
    "backward",
    "bilinear_upsample",
    "build_tape",
    "channel_affine",
    "clip",
    "concat",
    "conv2d",
    "div",
    "exp",
    "from_op",
    "global_avg_pool",
    "leaky_relu",
    "linear",
    "log",
    "mean",
    "mul",
    "nn",
    "ops",
    "pow",
    "relu",
    "reshape",
    "sigmoid",
    "sub",
    "sum",
    "tanh",
    "tile_spatial",
]
