"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Everything downstream (graph layers, attention, recurrent cells) is built
from the primitives here. Data lives in numpy arrays, float32 by default;
passing float64 arrays keeps float64 throughout, which is what the
finite-difference gradient checks rely on.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

# When enabled, every operation asserts its output is finite. Off by default
# because the check is O(n) per op; the test suite switches it on.
CHECK_FINITE = False


class ShapeError(ValueError):
    pass


class GradError(RuntimeError):
    pass


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype in (np.float32, np.float64):
        return arr
    return arr.astype(DEFAULT_DTYPE)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A numpy array plus an optional gradient and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = None
        self._prev = ()
        self.name = name
        if CHECK_FINITE and not np.all(np.isfinite(self.data)):
            raise GradError("non-finite values in tensor")

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != data shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Gradients accumulate into `.grad`; call `zero_grad` (or the
        optimizer's) between steps.
        """
        if self.data.size != 1:
            raise GradError(f"backward() needs a scalar, got shape {self.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node is not self and node._prev:
                # interior nodes don't need their grads after propagation
                if not node.requires_grad:
                    node.grad = None

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)


def as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _graph_node(data, parents, backward, dtype=None):
    out = Tensor(data, dtype=dtype)
    if any(p.requires_grad or p._prev for p in parents):
        out._prev = tuple(parents)
        out._backward = backward
    return out


# -- elementwise ----------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _graph_node(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _graph_node(a.data - b.data, (a, b), bwd)


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, like=a)

    def bwd(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _graph_node(a.data * b.data, (a, b), bwd)


def power(a, p):
    a = as_tensor(a)
    p = float(p)

    def bwd(g):
        a._accumulate(g * p * np.power(a.data, p - 1.0))

    return _graph_node(np.power(a.data, p), (a,), bwd)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        a._accumulate(g * mask)

    return _graph_node(np.where(mask, a.data, 0.0), (a,), bwd)


def sigmoid(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        a._accumulate(g * s * (1.0 - s))

    return _graph_node(s, (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bwd(g):
        a._accumulate(g * (1.0 - t * t))

    return _graph_node(t, (a,), bwd)


# -- shape manipulation ---------------------------------------------------


def matmul(a, b):
    """Matrix product, rank-2 or batched with numpy broadcasting rules."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        a._accumulate(_unbroadcast(ga, a.shape))
        b._accumulate(_unbroadcast(gb, b.shape))

    return _graph_node(np.matmul(a.data, b.data), (a, b), bwd)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        a._accumulate(np.transpose(g, inv))

    return _graph_node(np.transpose(a.data, axes), (a,), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)

    def bwd(g):
        a._accumulate(g.reshape(a.shape))

    return _graph_node(a.data.reshape(shape), (a,), bwd)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _graph_node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def slice_axis(a, axis, start, stop):
    """Contiguous slice along one axis; gradient scatters back zeros elsewhere."""
    a = as_tensor(a)
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accumulate(full)

    return _graph_node(a.data[idx], (a,), bwd)


# -- reductions -----------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape))

    return _graph_node(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.shape[axis]

    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / n, a.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg / n, a.shape))

    return _graph_node(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


# -- nonlinearities over axes ---------------------------------------------


def softmax(a, axis=-1):
    """Numerically stable softmax: rows along `axis` sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accumulate(s * (g - dot))

    return _graph_node(s, (a,), bwd)


def layer_norm(a, gain, bias, eps=1e-5):
    """Normalize over the last axis, then scale/shift with trainable vectors."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = a.shape[-1]

    def bwd(g):
        bias._accumulate(_unbroadcast(g, bias.shape))
        gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        gx = g * gain.data
        # standard layer-norm backward over the last axis
        ga = inv / n * (n * gx
                        - gx.sum(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
        a._accumulate(ga)

    return _graph_node(out, (a, gain, bias), bwd)


def masked_fill(a, mask, value):
    """Replace entries where `mask` is True with `value`; no grad through them."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)

    def bwd(g):
        a._accumulate(np.where(mask, 0.0, g))

    return _graph_node(np.where(mask, np.asarray(value, dtype=a.dtype), a.data), (a,), bwd)


def dropout(a, p, rng, training):
    """Inverted dropout; identity when not training or p == 0."""
    a = as_tensor(a)
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype)
    scale = 1.0 / (1.0 - p)

    def bwd(g):
        a._accumulate(g * keep * scale)

    return _graph_node(a.data * keep * scale, (a,), bwd)


# -- optimizer ------------------------------------------------------------


class Adam:
    """ADAM with bias correction; deterministic given parameter order."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise GradError(f"parameter {i} has no gradient")
            g = p.grad.astype(np.float64)
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            mhat = self.m[i] / (1 - b1 ** self.t)
            vhat = self.v[i] / (1 - b2 ** self.t)
            p.data = (p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
