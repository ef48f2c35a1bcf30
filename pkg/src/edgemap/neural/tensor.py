"""Reverse-mode autodiff over numpy arrays.

Only the operations the layer set needs are provided.  A graph is consumed by
``backward``; calling it twice on the same output raises, which catches
gradients taken against a stale forward pass.
"""
from __future__ import annotations

import numpy as np


class StaleTapeError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")
    __array_ufunc__ = None   # ndarray <op> Tensor defers to the Tensor operators

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=float)
        for p in _parents:
            if p._consumed:
                raise StaleTapeError("input comes from a graph that was already backpropagated")
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self._consumed = False

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def _accum(self, g):
        if not self.requires_grad:
            return
        self.grad = g.copy() if self.grad is None else self.grad + g

    # ---- graph traversal -------------------------------------------------
    def backward(self, grad=None):
        if self._consumed:
            raise StaleTapeError("backward already ran on this graph; redo the forward pass")
        if not self.requires_grad:
            raise StaleTapeError("tensor is not part of a differentiable graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("non-scalar output needs an explicit gradient")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=float)
        if grad.shape != self.data.shape:
            raise ValueError(f"gradient shape {grad.shape} != output shape {self.data.shape}")

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
                if id(p) not in seen:
                    stack.append((p, False))

        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            if node._parents:
                # interior node: free the tape and its gradient buffer
                node._parents = ()
                node._backward = None
                node._consumed = True
                if node is not self:
                    node.grad = None
        self._consumed = True

    # ---- elementwise arithmetic -----------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))
        return Tensor(a.data + b.data, _parents=(a, b), _backward=bw)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def bw(g):
            a._accum(-g)
        return Tensor(-a.data, _parents=(a,), _backward=bw)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g * b.data, a.shape))
            b._accum(_unbroadcast(g * a.data, b.shape))
        return Tensor(a.data * b.data, _parents=(a, b), _backward=bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            a._accum(_unbroadcast(g / b.data, a.shape))
            b._accum(_unbroadcast(-g * a.data / b.data ** 2, b.shape))
        return Tensor(a.data / b.data, _parents=(a, b), _backward=bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p: float):
        a = self

        def bw(g):
            a._accum(g * p * a.data ** (p - 1))
        return Tensor(a.data ** p, _parents=(a,), _backward=bw)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
                a._accum(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if a.ndim == 1:
                    gb = np.multiply.outer(a.data, g)
                else:
                    gb = np.swapaxes(a.data, -1, -2) @ g
                b._accum(_unbroadcast(gb, b.shape))
        return Tensor(a.data @ b.data, _parents=(a, b), _backward=bw)

    # ---- unary functions --------------------------------------------------
    def exp(self):
        a = self
        out = np.exp(a.data)

        def bw(g):
            a._accum(g * out)
        return Tensor(out, _parents=(a,), _backward=bw)

    def log(self):
        a = self

        def bw(g):
            a._accum(g / a.data)
        return Tensor(np.log(a.data), _parents=(a,), _backward=bw)

    def tanh(self):
        a = self
        out = np.tanh(a.data)

        def bw(g):
            a._accum(g * (1.0 - out ** 2))
        return Tensor(out, _parents=(a,), _backward=bw)

    def sigmoid(self):
        a = self
        out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

        def bw(g):
            a._accum(g * out * (1.0 - out))
        return Tensor(out, _parents=(a,), _backward=bw)

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(g):
            a._accum(g * mask)
        return Tensor(a.data * mask, _parents=(a,), _backward=bw)

    def softplus(self):
        a = self
        out = np.logaddexp(0.0, a.data)

        def bw(g):
            a._accum(g * 0.5 * (1.0 + np.tanh(0.5 * a.data)))
        return Tensor(out, _parents=(a,), _backward=bw)

    # ---- reductions and shape ops -----------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))
        return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _backward=bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self

        def bw(g):
            a._accum(g.reshape(a.shape))
        return Tensor(a.data.reshape(*shape), _parents=(a,), _backward=bw)

    def swapaxes(self, i, j):
        a = self

        def bw(g):
            a._accum(np.swapaxes(g, i, j))
        return Tensor(np.swapaxes(a.data, i, j), _parents=(a,), _backward=bw)

    def __getitem__(self, idx):
        a = self

        basic = all(isinstance(i, (slice, int, type(None), type(Ellipsis)))
                    for i in (idx if isinstance(idx, tuple) else (idx,)))

        def bw(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            a._accum(full)
        return Tensor(a.data[idx], _parents=(a,), _backward=bw)

    def log_softmax(self, axis=-1):
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

        def bw(g):
            soft = np.exp(out)
            a._accum(g - soft * g.sum(axis=axis, keepdims=True))
        return Tensor(out, _parents=(a,), _backward=bw)

    def softmax(self, axis=-1):
        return self.log_softmax(axis).exp()


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=bw)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(tensors):
            t._accum(np.take(g, i, axis=axis))
    return Tensor(np.stack([t.data for t in tensors], axis=axis),
                  _parents=tuple(tensors), _backward=bw)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=float), requires_grad=True)
