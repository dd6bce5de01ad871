"""Reverse-mode autodiff on numpy arrays, just big enough for the training
losses: affine maps, ReLU, tanh, exp/log/softplus, clip, elementwise min,
square, sum and mean.

Subgradient conventions (load-bearing for the clipped-surrogate tests):
ReLU passes zero gradient at exactly 0; clip passes the gradient at its
boundaries (ties go to the unclipped branch); minimum routes ties to its
first operand.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """Node in the computation tape; `parents` holds (tensor, vjp) pairs."""

    __slots__ = ("data", "grad", "parents")

    def __init__(self, data, parents=()):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents

    @property
    def shape(self):
        return self.data.shape

    # -- operators --
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()

        def visit(node: Tensor) -> None:
            stack = [(node, False)]
            while stack:
                n, expanded = stack.pop()
                if expanded:
                    order.append(n)
                    continue
                if id(n) in seen:
                    continue
                seen.add(id(n))
                stack.append((n, True))
                for parent, _ in n.parents:
                    stack.append((parent, False))

        visit(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad is None:
                continue
            for parent, vjp in node.parents:
                g = vjp(node.grad)
                if parent.grad is None:
                    parent.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
                else:
                    parent.grad = parent.grad + g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data,
                 parents=((a, lambda g: _unbroadcast(g, a.data.shape)),
                          (b, lambda g: _unbroadcast(g, b.data.shape))))
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(a.data * b.data,
                  parents=((a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                           (b, lambda g: _unbroadcast(g * a.data, b.data.shape))))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(a.data @ b.data,
                  parents=((a, lambda g: g @ b.data.T),
                           (b, lambda g: a.data.T @ g)))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0          # zero gradient at exactly 0
    return Tensor(x.data * mask, parents=((x, lambda g: g * mask),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return Tensor(y, parents=((x, lambda g: g * (1.0 - y * y)),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return Tensor(y, parents=((x, lambda g: g * y),))


def log(x) -> Tensor:
    x = _as_tensor(x)
    return Tensor(np.log(x.data), parents=((x, lambda g: g / x.data),))


def softplus(x) -> Tensor:
    """log(1 + e^x), computed stably."""
    x = _as_tensor(x)
    y = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    sig = 1.0 / (1.0 + np.exp(-x.data))
    return Tensor(y, parents=((x, lambda g: g * sig),))


def square(x) -> Tensor:
    x = _as_tensor(x)
    return Tensor(x.data * x.data, parents=((x, lambda g: g * 2.0 * x.data),))


def clip(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    mask = (x.data >= lo) & (x.data <= hi)   # boundary ties pass gradient
    return Tensor(np.clip(x.data, lo, hi), parents=((x, lambda g: g * mask),))


def minimum(a, b) -> Tensor:
    """Elementwise min; at ties the gradient goes to the first operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data
    return Tensor(np.where(take_a, a.data, b.data),
                  parents=((a, lambda g: _unbroadcast(g * take_a, a.data.shape)),
                           (b, lambda g: _unbroadcast(g * (~take_a), b.data.shape))))


def sum_(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    shape = x.data.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).astype(x.data.dtype, copy=True)
        gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).astype(x.data.dtype, copy=True)

    return Tensor(x.data.sum(axis=axis), parents=((x, vjp),))


def mean_(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum_(x, axis=axis), 1.0 / n)


def gradients(loss: Tensor, params: list[Tensor]) -> np.ndarray:
    """Backprop from a scalar loss; returns the flat gradient vector over
    `params` in order (zeros for parameters the loss does not reach)."""
    loss.backward()
    parts = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        parts.append(np.asarray(g, dtype=p.data.dtype).reshape(-1))
    return np.concatenate(parts)
