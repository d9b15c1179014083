"""Small layer/parameter containers built on the Tensor ops."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Base class: children and parameters are discovered from attributes."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{key}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _kaiming(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    scale = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int, stride: int = 1,
                 padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.weight = _kaiming(rng, (out_ch, in_ch, kernel, kernel),
                               in_ch * kernel * kernel)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)

    def forward(self, x):
        return ops.add_channel_bias(
            ops.conv2d(x, self.weight, stride=self.stride, padding=self.padding),
            self.bias,
        )


class Linear(Module):
    def __init__(self, rng, in_dim: int, out_dim: int):
        self.weight = _kaiming(rng, (in_dim, out_dim), in_dim)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)


class ChannelNorm(Module):
    """Per-channel affine normalization from instance statistics.

    Each channel of each sample is standardized by its own spatial mean and
    variance, then rescaled by learnable per-channel parameters. Used where
    batch statistics would be degenerate at small batch sizes.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        self.eps = eps
        self.scale = Tensor(np.ones(channels), requires_grad=True)
        self.shift = Tensor(np.zeros(channels), requires_grad=True)

    def forward(self, x):
        mu = ops.mean(x, axis=(2, 3), keepdims=True)
        centered = ops.sub(x, mu)
        var = ops.mean(ops.mul(centered, centered), axis=(2, 3), keepdims=True)
        normed = ops.div(centered, ops.pow(ops.add(var, self.eps), 0.5))
        return ops.channel_affine(normed, self.scale, self.shift)
