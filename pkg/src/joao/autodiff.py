"""A small reverse-mode autodiff tape over float64 numpy arrays.

Only the operations the encoder, projection heads and contrastive loss need
are provided. Each :class:`Tensor` remembers its parents and a closure that
pushes its gradient to them; :meth:`Tensor.backward` walks the graph in
reverse topological order.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        order, seen = [], set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, parents if req else (), backward if req else None)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))
    return _make(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))
    return _make(a.data * b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    def bw(g):
        _accum(a, g * c)
    return _make(a.data * c, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)
    return _make(a.data @ b.data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    def bw(g):
        _accum(a, g.T)
    return _make(a.data.T, (a,), bw)


def const_matmul(m, x: Tensor) -> Tensor:
    """``m @ x`` for a constant (dense or scipy sparse) matrix ``m``."""
    mt = m.T.tocsr() if sp.issparse(m) else np.asarray(m).T

    def bw(g):
        _accum(x, np.asarray(mt @ g))
    return _make(np.asarray(m @ x.data), (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        _accum(x, g * mask)
    return _make(np.where(mask, x.data, 0.0), (x,), bw)


def normalize_rows(x: Tensor) -> Tensor:
    """Each row divided by its Euclidean norm; zero rows are an error."""
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise ZeroDivisionError("cannot normalise a zero-norm row")
    y = x.data / norms

    def bw(g):
        _accum(x, (g - y * (g * y).sum(axis=1, keepdims=True)) / norms)
    return _make(y, (x,), bw)


def logsumexp_rows(x: Tensor) -> Tensor:
    """Row-wise ``log(sum(exp(x)))`` as a column vector."""
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)
    soft = e / s

    def bw(g):
        _accum(x, g * soft)
    return _make(out, (x,), bw)


def diagonal(x: Tensor) -> Tensor:
    n = min(x.shape)

    def bw(g):
        full = np.zeros_like(x.data)
        full[np.arange(n), np.arange(n)] = np.ravel(g)
        _accum(x, full)
    return _make(np.diagonal(x.data).copy().reshape(-1, 1), (x,), bw)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def bw(g):
        _accum(x, np.full_like(x.data, float(g) / n))
    return _make(np.array(x.data.mean()), (x,), bw)


def total(x: Tensor) -> Tensor:
    def bw(g):
        _accum(x, np.full_like(x.data, float(g)))
    return _make(np.array(x.data.sum()), (x,), bw)
