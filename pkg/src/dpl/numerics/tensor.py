"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy float64 array and, when produced by an
operation, remembers its parents and a closure that routes the output
gradient back to them.  Calling :meth:`Tensor.backward` on a scalar loss
walks the recorded graph once in reverse topological order and leaves
``.grad`` arrays on every node it visited, leaves included.

Everything is double precision on purpose: the finite-difference checker in
:mod:`dpl.numerics.gradcheck` is the correctness anchor for the whole
project and needs the headroom.  Forward passes are deterministic; no
threading happens inside the graph.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from dpl.errors import ConfigurationError, DimensionError

__all__ = [
    "Tensor",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "matmul",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "tensor_sum",
    "tensor_mean",
    "reshape",
    "concat",
    "stack",
    "linear_forward",
    "conv2d_forward",
    "upsample2x",
]


class Tensor:
    """A node in the recorded computation graph.

    ``data`` is always a float64 ndarray; ``grad`` is populated by
    ``backward`` and has the same shape as ``data``.  Leaf tensors have no
    parents and keep their gradient after a backward pass, which is how the
    optimizer reads them.
    """

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A new leaf sharing nothing with the graph (data is copied)."""
        return Tensor(self.data.copy())

    def backward(self):
        """Reverse-mode sweep from a scalar.  Raises if ``self`` is not scalar."""
        if self.data.size != 1:
            raise DimensionError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # Operator sugar; all routed through the module-level functions so the
    # backward closures live in one place.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, leaf={self._backward is None})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list:
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order  # parents precede consumers


def _accumulate(node: Tensor, grad: np.ndarray):
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += grad


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    out._backward = bw
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, (a, b))

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    out._backward = bw
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    out._backward = bw
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, (a, b))

    def bw(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = bw
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, (a,))

    def bw(g):
        _accumulate(a, -g)

    out._backward = bw
    return out


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    out = Tensor(a.data ** exponent, (a,))

    def bw(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1.0))

    out._backward = bw
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor(a.data @ b.data, (a, b))

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward = bw
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    out = Tensor(e, (a,))

    def bw(g):
        _accumulate(a, g * e)

    out._backward = bw
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data), (a,))

    def bw(g):
        _accumulate(a, g / a.data)

    out._backward = bw
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    out = Tensor(t, (a,))

    def bw(g):
        _accumulate(a, g * (1.0 - t * t))

    out._backward = bw
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # Sign-split form avoids overflow in exp for large negative inputs.
    s = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-a.data)),
                 np.exp(np.minimum(a.data, 0.0)) / (1.0 + np.exp(np.minimum(a.data, 0.0))))
    out = Tensor(s, (a,))

    def bw(g):
        _accumulate(a, g * s * (1.0 - s))

    out._backward = bw
    return out


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def bw(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy()
                        if np.ndim(g) else np.full_like(a.data, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    out._backward = bw
    return out


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), (a,))

    def bw(g):
        _accumulate(a, g.reshape(a.data.shape))

    out._backward = bw
    return out


def _getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[index], (a,))

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        _accumulate(a, full)

    out._backward = bw
    return out


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis), tuple(ts))
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    out._backward = bw
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in ts], axis=axis), tuple(ts))

    def bw(g):
        for i, t in enumerate(ts):
            _accumulate(t, np.take(g, i, axis=axis))

    out._backward = bw
    return out


def linear_forward(x, weights, bias) -> Tensor:
    """``x @ W + b`` for ``x`` of shape (n, in) and ``W`` of shape (in, out)."""
    x, weights, bias = as_tensor(x), as_tensor(weights), as_tensor(bias)
    if x.data.ndim != 2 or weights.data.ndim != 2:
        raise DimensionError(
            f"linear expects 2-D input and weights, got {x.data.shape}, {weights.data.shape}"
        )
    if x.data.shape[1] != weights.data.shape[0]:
        raise DimensionError(
            f"input columns ({x.data.shape[1]}) != weight rows ({weights.data.shape[0]})"
        )
    if bias.data.shape != (weights.data.shape[1],):
        raise DimensionError(
            f"bias shape {bias.data.shape} != ({weights.data.shape[1]},)"
        )
    return add(matmul(x, weights), bias)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    n, h, w, c = x.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, ho, wo, kh, kw, c), (s0, s1 * stride, s2 * stride, s1, s2, s3)
    )
    return np.ascontiguousarray(view), (n, h, w, c), ho, wo


def conv2d_forward(image, kernels, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``image`` with ``kernels``.

    ``image``: (H, W, C) or batched (N, H, W, C).  ``kernels``: (kh, kw, C, F).
    Output spatial size is floor((H + 2p - k) / s) + 1 per axis.
    """
    image, kernels = as_tensor(image), as_tensor(kernels)
    squeeze = image.data.ndim == 3
    x = image.data[None] if squeeze else image.data
    if x.ndim != 4 or kernels.data.ndim != 4:
        raise DimensionError(
            f"conv2d expects (N,H,W,C) image and (kh,kw,C,F) kernels, got "
            f"{image.data.shape} and {kernels.data.shape}"
        )
    kh, kw, cin, f = kernels.data.shape
    if x.shape[3] != cin:
        raise DimensionError(
            f"kernel channel count {cin} != image channels {x.shape[3]}"
        )
    ho = (x.shape[1] + 2 * padding - kh) // stride + 1
    wo = (x.shape[2] + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ConfigurationError(
            f"non-positive conv output size ({ho}x{wo}) for input {x.shape[1:3]}, "
            f"kernel {kh}x{kw}, stride {stride}, padding {padding}"
        )
    cols, padded_shape, ho, wo = _im2col(x, kh, kw, stride, padding)
    n = x.shape[0]
    cols2d = cols.reshape(n * ho * wo, kh * kw * cin)
    kflat = kernels.data.reshape(kh * kw * cin, f)
    out_data = (cols2d @ kflat).reshape(n, ho, wo, f)

    parents = (image, kernels)
    b = None
    if bias is not None:
        b = as_tensor(bias)
        if b.data.shape != (f,):
            raise DimensionError(f"conv bias shape {b.data.shape} != ({f},)")
        out_data = out_data + b.data
        parents = (image, kernels, b)
    if squeeze:
        out_data = out_data[0]

    out = Tensor(out_data, parents)

    def bw(g):
        gg = g[None] if squeeze else g
        g2d = gg.reshape(n * ho * wo, f)
        _accumulate(kernels, (cols2d.T @ g2d).reshape(kernels.data.shape))
        if b is not None:
            _accumulate(b, g2d.sum(axis=0))
        dcols = (g2d @ kflat.T).reshape(n, ho, wo, kh, kw, cin)
        dx = np.zeros(padded_shape)
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + ho * stride:stride, j:j + wo * stride:stride, :] += \
                    dcols[:, :, :, i, j, :]
        if padding:
            dx = dx[:, padding:-padding, padding:-padding, :]
        _accumulate(image, dx[0] if squeeze else dx)

    out._backward = bw
    return out


def upsample2x(a) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of (N, H, W, C) or (H, W, C)."""
    a = as_tensor(a)
    squeeze = a.data.ndim == 3
    x = a.data[None] if squeeze else a.data
    up = np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)
    out = Tensor(up[0] if squeeze else up, (a,))
    n, h, w, c = x.shape

    def bw(g):
        gg = g[None] if squeeze else g
        pooled = gg.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4))
        _accumulate(a, pooled[0] if squeeze else pooled)

    out._backward = bw
    return out
