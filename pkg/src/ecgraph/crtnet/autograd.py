"""A small reverse-mode automatic differentiation engine on numpy arrays.

Every op records its inputs and a closure that pushes the output gradient
back to them. `Tensor.backward` walks the recorded graph in reverse
topological order. Broadcasting is supported: gradients are summed back to
each operand's shape.
"""

from __future__ import annotations

import numpy as np

from ..errors import EcgraphError, ShapeMismatch


class NonFiniteError(EcgraphError, FloatingPointError):
    pass


class Tensor:
    """An n-dimensional float array that can track gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.name = name

    # -- basics -------------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        g = _unbroadcast(g, self.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's `.grad`."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype).copy()
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operators ----------------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p: float):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `g` down to `shape` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def make(data: np.ndarray, parents: tuple, backward) -> Tensor:
    """Wrap an op result; `backward(out)` is called with the finished output."""
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("an op produced non-finite values")
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else ())
    if needs:
        out._backward = lambda: backward(out)
    return out


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(out):
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(out.grad)
    return make(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(out):
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(-out.grad)
    return make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(out):
        if a.requires_grad:
            a._accum(out.grad * b.data)
        if b.requires_grad:
            b._accum(out.grad * a.data)
    return make(a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(out):
        if a.requires_grad:
            a._accum(out.grad / b.data)
        if b.requires_grad:
            b._accum(-out.grad * a.data / (b.data * b.data))
    return make(a.data / b.data, (a, b), back)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a._accum(out.grad * p * a.data ** (p - 1))
    return make(a.data ** p, (a,), back)


def exp(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a._accum(out.grad * out.data)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return make(data, (a,), back)


def log(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a._accum(out.grad / a.data)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)
    return make(data, (a,), back)


def tanh(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a._accum(out.grad * (1.0 - out.data ** 2))
    return make(np.tanh(a.data), (a,), back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # the tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a._accum(out.grad * out.data * (1.0 - out.data))
    return make(_sigmoid(a.data), (a,), back)


def relu(a) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a._accum(out.grad * (a.data > 0))
    return make(np.maximum(a.data, 0), (a,), back)


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)

    def back(out):
        a._accum(out.grad * scale)
    return make(a.data * scale, (a,), back)


# -- reductions and shape ------------------------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def back(out):
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))
    return make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def back(out):
        a._accum(out.grad.reshape(a.shape))
    return make(a.data.reshape(shape), (a,), back)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)

    def back(out):
        a._accum(np.transpose(out.grad, inv))
    return make(np.transpose(a.data, axes), (a,), back)


def swapaxes(a, i: int, j: int) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(out):
        g = np.zeros_like(a.data)
        np.add.at(g, idx, out.grad)
        a._accum(g)
    return make(a.data[idx], (a,), back)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def back(out):
        for t, g in zip(tensors, np.split(out.grad, cuts, axis=axis)):
            if t.requires_grad:
                t._accum(g)
    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting; a 1-D left operand is a row vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, a.shape[0])), b), b.shape[:-2] + (b.shape[-1],))
    if b.ndim < 2:
        raise ShapeMismatch("the right matmul operand needs at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def back(out):
        if a.requires_grad:
            a._accum(out.grad @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accum(np.swapaxes(a.data, -1, -2) @ out.grad)
    return make(a.data @ b.data, (a, b), back)


# -- fused normalisers ---------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction; the backward is the Jacobian-vector product."""
    a = as_tensor(a)
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(out):
        g = out.grad
        a._accum(y * (g - np.sum(g * y, axis=axis, keepdims=True)))
    return make(y, (a,), back)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def back(out):
        g = out.grad
        a._accum(g - np.exp(y) * g.sum(axis=axis, keepdims=True))
    return make(y, (a,), back)
