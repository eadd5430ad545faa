"""Parameter registry and the layer building blocks.

Weights use fan-in-scaled uniform init, biases start at zero, and the
offset-predicting convolution of the deformable block is zero-initialized
so spatial aggregation degenerates to an ordinary convolution grid at
step 0.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ParamRegistry:
    """Creates named parameters in a fixed declaration order."""

    def __init__(self, rng: np.random.Generator, dtype: np.dtype):
        self.rng = rng
        self.dtype = np.dtype(dtype)
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        t = Tensor(np.ascontiguousarray(data, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def uniform(self, name: str, shape: tuple, fan_in: int) -> Tensor:
        limit = 1.0 / math.sqrt(fan_in)
        return self._add(name, self.rng.uniform(-limit, limit, size=shape))

    def small_uniform(self, name: str, shape: tuple, scale: float = 0.02) -> Tensor:
        return self._add(name, self.rng.uniform(-scale, scale, size=shape))

    def zeros(self, name: str, shape: tuple) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple) -> Tensor:
        return self._add(name, np.ones(shape))


class Linear:
    def __init__(self, reg: ParamRegistry, name: str, d_in: int, d_out: int):
        self.w = reg.uniform(f"{name}.w", (d_in, d_out), fan_in=d_in)
        self.b = reg.zeros(f"{name}.b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class Conv2d:
    def __init__(
        self,
        reg: ParamRegistry,
        name: str,
        c_in: int,
        c_out: int,
        k: int = 3,
        stride: int = 1,
        pad: int | None = None,
        zero_init: bool = False,
    ):
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        if zero_init:
            self.w = reg.zeros(f"{name}.w", (c_out, c_in, k, k))
        else:
            self.w = reg.uniform(f"{name}.w", (c_out, c_in, k, k), fan_in=c_in * k * k)
        self.b = reg.zeros(f"{name}.b", (c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class OffsetConv2d:
    """Deformable aggregation: per-location offsets + bilinear sampling."""

    def __init__(self, reg: ParamRegistry, name: str, c_in: int, c_out: int, k: int = 3):
        self.k = k
        self.offset_conv = Conv2d(
            reg, f"{name}.offset", c_in, 2 * k * k, k=k, zero_init=True
        )
        self.w = reg.uniform(f"{name}.w", (c_out, c_in, k, k), fan_in=c_in * k * k)
        self.b = reg.zeros(f"{name}.b", (c_out,))

    def __call__(self, x: Tensor) -> Tensor:
        offsets = self.offset_conv(x)
        return ad.offset_aggregate(x, offsets, self.w, self.b)


class LayerNorm:
    """Normalizes over the channel axis at each spatial location."""

    def __init__(self, reg: ParamRegistry, name: str, channels: int, eps: float = 1e-5):
        self.gamma = reg.ones(f"{name}.g", (channels,))
        self.beta = reg.zeros(f"{name}.b", (channels,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=1, keepdims=True)
        centered = x - mu
        var = ad.mul(centered, centered).mean(axis=1, keepdims=True)
        xhat = ad.div(centered, ad.sqrt(ad.add(var, self.eps)))
        g = self.gamma.reshape((1, -1, 1, 1))
        b = self.beta.reshape((1, -1, 1, 1))
        return ad.add(ad.mul(xhat, g), b)
