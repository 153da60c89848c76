"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray and records, per op, a closure that routes the
output gradient back to the inputs. Calling ``backward()`` on a scalar walks
the tape in reverse topological order. Everything is plain numpy, so 64-bit
runs are exactly reproducible and suitable for finite-difference checking;
training typically runs the same graph in float32.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from ovdet.errors import ConfigError

_GRAD_ENABLED = True

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / data statistics)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # numpy must not try to broadcast elementwise over Tensor objects
    __array_ufunc__ = None

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
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)

        # iterative topological sort; graphs can be deep at large depth×tokens
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    node.grad = None  # free intermediate gradients

    # ------------------------------------------------------------------ ops

    def __add__(self, other):
        a, b = self, _as_tensor(other)
        out = _node(a.data + b.data, (a, b))
        if out._parents:
            def backward(g):
                if a.requires_grad:
                    a._accumulate(_sum_to_shape(g, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_sum_to_shape(g, b.data.shape))
            out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        a = self
        out = _node(-a.data, (a,))
        if out._parents:
            def backward(g):
                a._accumulate(-g)
            out._backward = backward
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        a, b = self, _as_tensor(other)
        out = _node(a.data * b.data, (a, b))
        if out._parents:
            def backward(g):
                if a.requires_grad:
                    a._accumulate(_sum_to_shape(g * b.data, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_sum_to_shape(g * a.data, b.data.shape))
            out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, _as_tensor(other)
        out = _node(a.data / b.data, (a, b))
        if out._parents:
            def backward(g):
                if a.requires_grad:
                    a._accumulate(_sum_to_shape(g / b.data, a.data.shape))
                if b.requires_grad:
                    b._accumulate(_sum_to_shape(-g * a.data / (b.data * b.data), b.data.shape))
            out._backward = backward
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        out = _node(a.data ** exponent, (a,))
        if out._parents:
            def backward(g):
                a._accumulate(g * exponent * a.data ** (exponent - 1))
            out._backward = backward
        return out

    def __matmul__(self, other):
        a, b = self, _as_tensor(other)
        if a.ndim < 2 or b.ndim < 2:
            raise ConfigError("matmul operands must have at least 2 dimensions")
        out = _node(a.data @ b.data, (a, b))
        if out._parents:
            def backward(g):
                if a.requires_grad:
                    ga = g @ np.swapaxes(b.data, -1, -2)
                    a._accumulate(_sum_to_shape(ga, a.data.shape))
                if b.requires_grad:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                    b._accumulate(_sum_to_shape(gb, b.data.shape))
            out._backward = backward
        return out

    def __getitem__(self, idx):
        a = self
        out = _node(a.data[idx], (a,))
        if out._parents:
            def backward(g):
                if a.grad is None:
                    a.grad = np.zeros_like(a.data)
                np.add.at(a.grad, idx, g)
            out._backward = backward
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        out = _node(a.data.reshape(shape), (a,))
        if out._parents:
            def backward(g):
                a._accumulate(g.reshape(a.data.shape))
            out._backward = backward
        return out

    def transpose(self, axes):
        a = self
        axes = tuple(axes)
        inverse = tuple(np.argsort(axes))
        out = _node(a.data.transpose(axes), (a,))
        if out._parents:
            def backward(g):
                a._accumulate(g.transpose(inverse))
            out._backward = backward
        return out

    def swapaxes(self, ax1, ax2):
        a = self
        out = _node(np.swapaxes(a.data, ax1, ax2), (a,))
        if out._parents:
            def backward(g):
                a._accumulate(np.swapaxes(g, ax1, ax2))
            out._backward = backward
        return out

    def sum(self, axis=None, keepdims=False):
        a = self
        out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,))
        if out._parents:
            def backward(g):
                if axis is None:
                    a._accumulate(np.broadcast_to(g, a.data.shape).copy())
                    return
                if not keepdims:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def exp(self):
        a = self
        out = _node(np.exp(a.data), (a,))
        if out._parents:
            data = out.data
            def backward(g):
                a._accumulate(g * data)
            out._backward = backward
        return out

    def log(self):
        a = self
        out = _node(np.log(a.data), (a,))
        if out._parents:
            def backward(g):
                a._accumulate(g / a.data)
            out._backward = backward
        return out

    def sqrt(self):
        a = self
        out = _node(np.sqrt(a.data), (a,))
        if out._parents:
            data = out.data
            def backward(g):
                a._accumulate(g * 0.5 / data)
            out._backward = backward
        return out

    def abs(self):
        a = self
        out = _node(np.abs(a.data), (a,))
        if out._parents:
            def backward(g):
                a._accumulate(g * np.sign(a.data))
            out._backward = backward
        return out

    def tanh(self):
        a = self
        out = _node(np.tanh(a.data), (a,))
        if out._parents:
            data = out.data
            def backward(g):
                a._accumulate(g * (1.0 - data * data))
            out._backward = backward
        return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple) -> Tensor:
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(p for p in parents)
    return out


# ---------------------------------------------------------------- functions


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the gradient goes to the first operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = _node(np.maximum(a.data, b.data), (a, b))
    if out._parents:
        take_a = a.data >= b.data
        def backward(g):
            if a.requires_grad:
                a._accumulate(_sum_to_shape(g * take_a, a.data.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(g * ~take_a, b.data.shape))
        out._backward = backward
    return out


def minimum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = _node(np.minimum(a.data, b.data), (a, b))
    if out._parents:
        take_a = a.data <= b.data
        def backward(g):
            if a.requires_grad:
                a._accumulate(_sum_to_shape(g * take_a, a.data.shape))
            if b.requires_grad:
                b._accumulate(_sum_to_shape(g * ~take_a, b.data.shape))
        out._backward = backward
    return out


def relu(x) -> Tensor:
    return maximum(x, 0.0)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = _node(_sigmoid_np(x.data), (x,))
    if out._parents:
        data = out.data
        def backward(g):
            x._accumulate(g * data * (1.0 - data))
        out._backward = backward
    return out


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    pos = z >= 0
    out = np.empty_like(z)
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus_np(z: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def softplus(x) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    x = _as_tensor(x)
    out = _node(_softplus_np(x.data), (x,))
    if out._parents:
        sig = _sigmoid_np(x.data)
        def backward(g):
            x._accumulate(g * sig)
        out._backward = backward
    return out


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x); stable for large |x|."""
    x = _as_tensor(x)
    out = _node(-_softplus_np(-x.data), (x,))
    if out._parents:
        sig_neg = _sigmoid_np(-x.data)
        def backward(g):
            x._accumulate(g * sig_neg)
        out._backward = backward
    return out


def gelu(x) -> Tensor:
    """GELU with the tanh approximation (ViT default)."""
    x = _as_tensor(x)
    z = x.data
    z2 = z * z
    t = np.tanh(_SQRT_2_OVER_PI * (z + _GELU_C * z2 * z))
    half_one_plus_t = 0.5 * (1.0 + t)
    out = _node(z * half_one_plus_t, (x,))
    if out._parents:
        def backward(g):
            dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * z2)
            grad = half_one_plus_t + 0.5 * z * (1.0 - t * t) * dinner
            x._accumulate(g * grad)
        out._backward = backward
    return out


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = _node(y, (x,))
    if out._parents:
        def backward(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - dot))
        out._backward = backward
    return out


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    val = np.log(s) + m
    if not keepdims:
        val = np.squeeze(val, axis=axis)
    out = _node(val, (x,))
    if out._parents:
        soft = e / s
        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            x._accumulate(g * soft)
        out._backward = backward
    return out


def layer_norm(x, gain, bias, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ConfigError("layer_norm eps must be positive")
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = _node(xhat * gain.data + bias.data, (x, gain, bias))
    if out._parents:
        def backward(g):
            if bias.requires_grad:
                bias._accumulate(_sum_to_shape(g, bias.data.shape))
            if gain.requires_grad:
                gain._accumulate(_sum_to_shape(g * xhat, gain.data.shape))
            if x.requires_grad:
                dxhat = g * gain.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                x._accumulate(inv * (dxhat - m1 - xhat * m2))
        out._backward = backward
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward(g):
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    sl = [slice(None)] * g.ndim
                    sl[axis] = slice(start, stop)
                    t._accumulate(g[tuple(sl)])
        out._backward = backward
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))
    if out._parents:
        def backward(g):
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accumulate(np.take(g, i, axis=axis))
        out._backward = backward
    return out


def l2_normalize(x, axis: int = -1, min_norm: float = 1e-12) -> Tensor:
    """Scale rows to unit L2 norm; rejects (near-)zero rows outright."""
    x = _as_tensor(x)
    norms = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    if np.any(norms < min_norm):
        raise ValueError("cannot L2-normalize an embedding with zero norm")
    return x / (x * x).sum(axis=axis, keepdims=True).sqrt()
