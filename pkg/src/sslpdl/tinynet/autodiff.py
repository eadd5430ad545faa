"""Minimal reverse-mode autodiff on numpy arrays.

Every operation records vector-Jacobian closures on its output node;
``Tensor.backward()`` walks the graph in reverse topological order and
accumulates gradients into leaves with ``requires_grad``. All math is
plain numpy, so runs are deterministic and work in float32 or float64.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


class Tensor:
    """A graph node holding an ndarray and its backward closures."""

    __slots__ = ("data", "grad", "requires_grad", "_links")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._links: list[tuple["Tensor", object]] = []

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ConfigError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._links:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._links:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = contrib
                else:
                    # out-of-place: contribs may alias upstream buffers
                    parent.grad = parent.grad + contrib
            if node._links:
                node.grad = None  # free intermediate gradients early

    # ---- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _node(data, *links) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p, _ in links))
    if out.requires_grad:
        out._links = list(links)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---- arithmetic ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data + b.data,
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data * b.data,
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.data / b.data,
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    )


def pow_const(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _node(
        a.data**exponent,
        (a, lambda g: g * exponent * a.data ** (exponent - 1.0)),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return _node(out_data, (a, lambda g: g * out_data))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a, lambda g: g / a.data))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    return _node(out_data, (a, lambda g: g * (1.0 - out_data * out_data)))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)
    return _node(out_data, (a, lambda g: g * 0.5 / out_data))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def grad_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def grad_b(g):
        if b.data.ndim == 2 and a.data.ndim > 2:
            # batched input against a shared weight: one flat GEMM
            d_in, d_out = b.data.shape
            return a.data.reshape(-1, d_in).T @ g.reshape(-1, d_out)
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _node(np.matmul(a.data, b.data), (a, grad_a), (b, grad_b))


# ---- shape ops ------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a, lambda g: g.reshape(a.data.shape)))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _node(
        a.data.transpose(axes), (a, lambda g: g.transpose(tuple(inverse)))
    )


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def grad(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a, grad))


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis, keepdims), 1.0 / count)


def take_rows(a, indices, axis: int, assume_unique: bool = False) -> Tensor:
    """Select indices along one axis; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)

    def grad(g):
        out = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = idx
        if assume_unique:
            out[tuple(sl)] = g
        else:
            np.add.at(out, tuple(sl), g)
        return out

    return _node(np.take(a.data, idx, axis=axis), (a, grad))


def logsumexp(a, axis: int, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out_data = np.log(total) + m
    softmax = shifted / total

    def grad(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return gg * softmax

    return _node(
        out_data if keepdims else np.squeeze(out_data, axis=axis), (a, grad)
    )


# ---- structured ops --------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, pad: int, pad_mode: str):
    if pad:
        mode = "edge" if pad_mode == "edge" else "constant"
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode=mode)
    B, C, H, W = x.shape
    oh = (H - k) // stride + 1
    ow = (W - k) // stride + 1
    cols = np.empty((B, C, k, k, oh, ow), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[
                :, :, i : i + oh * stride : stride, j : j + ow * stride : stride
            ]
    return cols, oh, ow


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0, pad_mode: str = "edge") -> Tensor:
    """2-d convolution: x (B,C,H,W), w (O,C,k,k), b (O,).

    Edge-replicate padding by default, matching the border clamp of
    :func:`offset_aggregate` so zero offsets reproduce this op exactly.
    """
    x, w = as_tensor(x), as_tensor(w)
    B, C, H, W = x.data.shape
    O, Cw, k, _ = w.data.shape
    if Cw != C:
        raise ConfigError(f"conv2d channel mismatch: input {C}, kernel {Cw}")
    if pad_mode not in ("edge", "zero"):
        raise ConfigError(f"pad_mode must be edge or zero, got {pad_mode!r}")
    cols, oh, ow = _im2col(x.data, k, stride, pad, pad_mode)
    out_data = np.ascontiguousarray(
        np.tensordot(w.data, cols, axes=([1, 2, 3], [1, 2, 3])).transpose(1, 0, 2, 3)
    )

    def grad_x(g):
        # (C,i,j,B,oh,ow) -> (B,C,i,j,oh,ow)
        dcols = np.tensordot(w.data, g, axes=([0], [1])).transpose(3, 0, 1, 2, 4, 5)
        Hp, Wp = H + 2 * pad, W + 2 * pad
        dxp = np.zeros((B, C, Hp, Wp), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += dcols[
                    :, :, i, j
                ]
        if not pad:
            return dxp
        if pad_mode == "zero":
            return dxp[:, :, pad : pad + H, pad : pad + W]
        # fold replicated-border gradients back onto the edge pixels
        tmp = dxp[:, :, pad : Hp - pad, :].copy()
        tmp[:, :, 0, :] += dxp[:, :, :pad, :].sum(axis=2)
        tmp[:, :, -1, :] += dxp[:, :, Hp - pad :, :].sum(axis=2)
        dx = tmp[:, :, :, pad : Wp - pad].copy()
        dx[:, :, :, 0] += tmp[:, :, :, :pad].sum(axis=3)
        dx[:, :, :, -1] += tmp[:, :, :, Wp - pad :].sum(axis=3)
        return dx

    def grad_w(g):
        return np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))

    links = [(x, grad_x), (w, grad_w)]
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data[None, :, None, None]
        links.append((b, lambda g: g.sum(axis=(0, 2, 3))))
    return _node(out_data, *links)


def upsample_nearest(x, factor: int) -> Tensor:
    """Nearest-neighbor spatial upsampling of (B,C,H,W) by an integer factor."""
    x = as_tensor(x)
    B, C, H, W = x.data.shape
    out_data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def grad(g):
        return g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5))

    return _node(out_data, (x, grad))


def offset_aggregate(x, offsets, w, b=None) -> Tensor:
    """Convolution whose taps sample at learned fractional offsets.

    x (B,C,H,W); offsets (B,2*k*k,H,W) ordered (row, col) per tap;
    w (O,C,k,k); output (B,O,H,W) at stride 1. Sampling is bilinear and
    clamps to the border; the clamp zeroes the coordinate gradient
    outside the open interior.
    """
    x, offsets, w = as_tensor(x), as_tensor(offsets), as_tensor(w)
    B, C, H, W = x.data.shape
    O, Cw, k, _ = w.data.shape
    if Cw != C:
        raise ConfigError(f"offset_aggregate channel mismatch: {C} vs {Cw}")
    if offsets.data.shape != (B, 2 * k * k, H, W):
        raise ConfigError(
            f"offsets shape {offsets.data.shape} != {(B, 2 * k * k, H, W)}"
        )
    from ._kernels import bilinear_gather, bilinear_scatter

    kk = k * k
    xb = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1))  # (B,H,W,C)
    sampled, y0, x0, fy, fx, in_y, in_x = bilinear_gather(
        xb, np.ascontiguousarray(offsets.data), k
    )
    w_taps = np.ascontiguousarray(
        w.data.reshape(O, C, kk).transpose(2, 0, 1)
    )  # (kk,O,C)
    # contract taps and channels: (kk,O,C) x (kk,B,H,W,C) -> (O,B,H,W)
    out_data = np.ascontiguousarray(
        np.tensordot(w_taps, sampled, axes=([0, 2], [0, 4])).transpose(1, 0, 2, 3)
    )

    # grad_x and grad_offsets come from one scatter kernel call; the two
    # vjps run back to back on the same upstream gradient, so cache it
    scatter_cache: dict = {"users": 0, "g": None, "out": None}
    n_users = int(x.requires_grad) + int(offsets.requires_grad)

    def _scatter(g):
        if scatter_cache["g"] is g:
            out = scatter_cache["out"]
        else:
            gs = np.tensordot(w_taps, g, axes=([1], [1]))  # (kk,C,B,H,W)
            gs = np.ascontiguousarray(gs.transpose(0, 2, 3, 4, 1))
            out = bilinear_scatter(gs, xb, y0, x0, fy, fx, in_y, in_x, k)
            scatter_cache["g"] = g
            scatter_cache["out"] = out
            scatter_cache["users"] = n_users
        scatter_cache["users"] -= 1
        if scatter_cache["users"] <= 0:
            scatter_cache["g"] = None
            scatter_cache["out"] = None
        return out

    def grad_x(g):
        return _scatter(g)[0].transpose(0, 3, 1, 2)

    def grad_offsets(g):
        return _scatter(g)[1]

    def grad_w(g):
        # (B,O,H,W) x (kk,B,H,W,C) -> (O,kk,C)
        dw = np.tensordot(g, sampled, axes=([0, 2, 3], [1, 2, 3]))
        return np.ascontiguousarray(dw.transpose(0, 2, 1)).reshape(O, C, k, k)

    links = [(x, grad_x), (offsets, grad_offsets), (w, grad_w)]
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data[None, :, None, None]
        links.append((b, lambda g: g.sum(axis=(0, 2, 3))))
    return _node(out_data, *links)


# ---- activations -----------------------------------------------------------

_GELU_C = 0.7978845608028654  # sqrt(2 / pi)
_GELU_A = 0.044715


def gelu(x) -> Tensor:
    """GELU, tanh approximation (fused op with analytic derivative)."""
    x = as_tensor(x)
    v = x.data
    t = np.tanh(_GELU_C * (v + _GELU_A * v * v * v))
    out_data = 0.5 * v * (1.0 + t)

    def grad(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
        return g * (0.5 * (1.0 + t) + 0.5 * v * dt)

    return _node(out_data, (x, grad))
