"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to parent gradients. ``backward``
walks the graph in reverse topological order. Only what the denoisers and
the CUT networks need is implemented; convolutions are stride 1 with
"same" padding and resolution changes go through 2x pooling/upsampling.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=parents if req else (),
                  _backward=backward if req else None)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(root: Tensor, grad=None) -> None:
    """Accumulate gradients of ``root`` (seeded with ``grad``) into every leaf."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data) if grad is None else np.asarray(grad, dtype=float)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# elementwise -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def neg(a) -> Tensor:
    return _make(-a.data, (a,), lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def silu(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))  # overflow-free sigmoid
    out = a.data * s
    return _make(out, (a,), lambda g: a._accumulate(g * (s + out * (1.0 - s))))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def square(a: Tensor) -> Tensor:
    return _make(a.data**2, (a,), lambda g: a._accumulate(2.0 * g * a.data))


# reductions and shape ----------------------------------------------------------

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _make(a.data.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: a._accumulate(g.transpose(inv)))


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            t._accumulate(part)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def take(a: Tensor, idx, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(idx)

    def bw(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        a._accumulate(full)

    return _make(np.take(a.data, idx, axis=axis), (a,), bw)


def logsumexp(a: Tensor, axis: int) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    return _make(out, (a,), lambda g: a._accumulate(np.expand_dims(g, axis) * e / s))


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((a.data**2).sum(axis=axis, keepdims=True) + eps)
    u = a.data / norm

    def bw(g):
        a._accumulate((g - u * (g * u).sum(axis=axis, keepdims=True)) / norm)

    return _make(u, (a,), bw)


# layers ------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution. x: (B, C, H, W), w: (O, C, k, k), b: (O,)."""
    k = w.shape[-1]
    p = k // 2
    B, C, H, W = x.shape
    O = w.shape[0]
    xp = np.pad(x.data.transpose(1, 0, 2, 3), ((0, 0), (0, 0), (p, p), (p, p)))
    # cols[c, i, j, b, h, w] = x[b, c, h + i - p, w + j - p]
    cols = np.empty((C, k, k, B, H, W))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, :, i:i + H, j:j + W]
    cols = cols.reshape(C * k * k, B * H * W)
    wm = w.data.reshape(O, C * k * k)
    out = (wm @ cols).reshape(O, B, H, W).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def bw(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(O, B * H * W)
        if w.requires_grad:
            w._accumulate((g2 @ cols.T).reshape(w.shape))
        if x.requires_grad:
            gcols = (wm.T @ g2).reshape(C, k, k, B, H, W)
            gxp = np.zeros((C, B, H + 2 * p, W + 2 * p))
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + H, j:j + W] += gcols[:, i, j]
            x._accumulate(gxp[:, :, p:p + H, p:p + W].transpose(1, 0, 2, 3))
        if b is not None:
            b._accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.ascontiguousarray(out), parents, bw)


def avgpool2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = x.data.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def bw(g):
        x._accumulate(np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25)

    return _make(out, (x,), bw)


def upsample2(x: Tensor) -> Tensor:
    B, C, H, W = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bw(g):
        x._accumulate(g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)))

    return _make(out, (x,), bw)
