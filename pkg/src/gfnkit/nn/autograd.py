"""Reverse-mode differentiation over a small, fixed set of numpy primitives.

Every loss in this package is written with these ops only:
matmul, add/sub/mul (with broadcasting), relu, square, sum/mean,
masked log-softmax, logsumexp, indexing (gather), reshape and where.
"""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

DTYPE = np.float64


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = ()):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = None

    # -- basics -----------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor({self.data!r}, requires_grad={self.requires_grad})"

    def _make(self, data, parents, backward):
        out = Tensor(data, _parents=parents)
        if out.requires_grad:
            out._backward = backward
        return out

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(g, other.shape)

        return self._make(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)

        def backward(g):
            return _unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)

        return self._make(self.data - other.data, (self, other), backward)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return self._make(-self.data, (self,), lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def backward(g):
            return _unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)

        return self._make(a * b, (self, other), backward)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data

        def backward(g):
            return g @ b.T, a.T @ g

        return self._make(a @ b, (self, other), backward)

    def __getitem__(self, idx):
        shape = self.shape

        def backward(g):
            full = np.zeros(shape, dtype=DTYPE)
            np.add.at(full, idx, g)
            return (full,)

        return self._make(self.data[idx], (self,), backward)

    def reshape(self, *shape):
        old = self.shape
        return self._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(old),))

    def relu(self):
        pos = self.data > 0
        return self._make(np.where(pos, self.data, 0.0), (self,), lambda g: (g * pos,))

    def square(self):
        a = self.data
        return self._make(a * a, (self,), lambda g: (2.0 * a * g,))

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    # -- graph traversal --------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
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
        grads = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def where(cond, a, b) -> Tensor:
    """Select from ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                _unbroadcast(np.where(cond, 0.0, g), b.shape))

    return a._make(np.where(cond, a.data, b.data), (a, b), backward)


def masked_log_softmax(x: Tensor, mask) -> Tensor:
    """Log-softmax over the last axis restricted to ``mask``; masked entries (and rows
    with no legal entry) come out as exactly 0 so they never produce NaN/inf."""
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    z = np.where(mask, x.data, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(z - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    empty = s == 0
    lse = m + np.log(np.where(empty, 1.0, s))
    out = np.where(mask, x.data - lse, 0.0)
    p = np.where(empty, 0.0, e / np.where(empty, 1.0, s))

    def backward(g):
        g = np.where(mask, g, 0.0)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return x._make(out, (x,), backward)


def logsumexp(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """logsumexp along ``axis``; with ``mask`` only the selected entries count
    (an all-masked slice yields -inf and a zero gradient)."""
    x = as_tensor(x)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    z = np.where(mask, x.data, -np.inf)
    m = z.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(z - m), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = (m + np.log(s)).squeeze(axis)
    p = np.where(s > 0, e / np.where(s > 0, s, 1.0), 0.0)

    def backward(g):
        return (np.expand_dims(g, axis) * p,)

    return x._make(out, (x,), backward)


def grad(loss_fn: Callable[..., Tensor], params: dict, *args, **kwargs):
    """Return ``(loss_value, grads)`` for ``loss_fn(param_tensors, *args)``.

    ``params`` maps names to arrays; the returned ``grads`` has the same keys.
    """
    leaves = {k: Tensor(np.array(v, dtype=DTYPE), requires_grad=True) for k, v in params.items()}
    loss = loss_fn(leaves, *args, **kwargs)
    value = loss.item()
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    loss.backward()
    grads = {}
    for k, t in leaves.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
        grads[k] = g
    return value, grads


def numerical_grad(fn: Callable[[dict], float], params: dict, h: float = 1e-5,
                   keys: Iterable[str] | None = None) -> dict:
    """Central finite differences of a scalar function of a parameter dict."""
    out = {}
    for k in keys if keys is not None else params:
        base = np.array(params[k], dtype=DTYPE)
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = fn({**params, k: base})
            flat[i] = old - h
            down = fn({**params, k: base})
            flat[i] = old
            gf[i] = (up - down) / (2 * h)
        out[k] = g
    return out
