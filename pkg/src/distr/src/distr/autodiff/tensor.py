"""Array-valued reverse-mode automatic differentiation.

A `Tensor` wraps a float64 numpy array and records the operation that produced
it. Calling `backward()` on a scalar result walks the recorded graph in reverse
topological order and accumulates gradients into every tensor created with
`requires_grad=True`.

Broadcasting is limited to two cases: an operand that is 0-d, and the bias
vector of `affine`. Any other shape mismatch raises `ShapeError`.
"""
from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np

from distr.exceptions import ShapeError, UnsupportedPrimitiveError

Backward = Callable[[np.ndarray], None]


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_backward")
    __array_priority__ = 1000

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: Tuple["Tensor", ...] = (),
        backward: Optional[Backward] = None,
        op: str = "leaf",
    ) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = parents
        self._backward = backward

    # ===== Construction helpers =====

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy())

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.value.reshape(()))

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if grad.shape != self.value.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match value shape {self.value.shape}")
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    # ===== numpy interop =====

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitiveError(f"numpy ufunc '{ufunc.__name__}.{method}' is not differentiable here")
        handler = _UFUNCS.get(ufunc)
        if handler is None:
            raise UnsupportedPrimitiveError(f"unsupported primitive: numpy.{ufunc.__name__}")
        return handler(*inputs)

    def __array__(self, dtype=None, copy=None):
        raise UnsupportedPrimitiveError("implicit conversion of a Tensor to ndarray would drop its gradient")

    # ===== Operators =====

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

    def __pow__(self, power):
        if power == 2:
            return square(self)
        raise UnsupportedPrimitiveError(f"unsupported primitive: power {power}")

    def __getitem__(self, index):
        return take(self, index)

    def tanh(self):
        return tanh(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def square(self):
        return square(self)

    def abs(self):
        return absolute(self)

    def sum(self, axis: Optional[int] = None):
        return sum_(self, axis)

    def mean(self, axis: Optional[int] = None):
        return mean(self, axis)

    def clip(self, low: float, high: float):
        return clip(self, low, high)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    # ===== Reverse pass =====

    def backward(self) -> None:
        if self.value.shape != ():
            raise ShapeError(f"backward() needs a scalar output, got shape {self.shape}")
        order = _topological_order(self)
        for node in order:
            if node is not self and node._backward is not None:
                node.grad = None
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _topological_order(root: Tensor) -> list:
    order, visited = [], set()
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
    return order


def lift(x) -> Tensor:
    """Constants become non-differentiable leaves."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value: np.ndarray, parents: Sequence[Tensor], backward: Backward, op: str) -> Tensor:
    tracked = tuple(p for p in parents if p.requires_grad)
    if not tracked:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=tuple(parents), backward=backward, op=op)


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ (only 0-d operands broadcast)")


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


# ============ Elementwise binary ============

def add(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "add")

    def backward(g):
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(g, b.shape))

    return _result(a.value + b.value, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "sub")

    def backward(g):
        a._accumulate(_reduce_to(g, a.shape))
        b._accumulate(_reduce_to(-g, b.shape))

    return _result(a.value - b.value, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "mul")

    def backward(g):
        a._accumulate(_reduce_to(g * b.value, a.shape))
        b._accumulate(_reduce_to(g * a.value, b.shape))

    return _result(a.value * b.value, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "div")

    def backward(g):
        a._accumulate(_reduce_to(g / b.value, a.shape))
        b._accumulate(_reduce_to(-g * a.value / np.square(b.value), b.shape))

    return _result(a.value / b.value, (a, b), backward, "div")


def minimum(a, b) -> Tensor:
    a, b = lift(a), lift(b)
    _check_elementwise(a, b, "minimum")
    pick_a = a.value <= b.value

    def backward(g):
        a._accumulate(_reduce_to(np.where(pick_a, g, 0.0), a.shape))
        b._accumulate(_reduce_to(np.where(pick_a, 0.0, g), b.shape))

    return _result(np.minimum(a.value, b.value), (a, b), backward, "minimum")


# ============ Elementwise unary ============

def neg(a) -> Tensor:
    a = lift(a)
    return _result(-a.value, (a,), lambda g: a._accumulate(-g), "neg")


def tanh(a) -> Tensor:
    a = lift(a)
    out = np.tanh(a.value)
    return _result(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)), "tanh")


def relu(a) -> Tensor:
    a = lift(a)
    mask = a.value > 0.0
    return _result(np.where(mask, a.value, 0.0), (a,), lambda g: a._accumulate(np.where(mask, g, 0.0)), "relu")


def exp(a) -> Tensor:
    a = lift(a)
    out = np.exp(a.value)
    return _result(out, (a,), lambda g: a._accumulate(g * out), "exp")


def log(a) -> Tensor:
    a = lift(a)
    return _result(np.log(a.value), (a,), lambda g: a._accumulate(g / a.value), "log")


def square(a) -> Tensor:
    a = lift(a)
    return _result(np.square(a.value), (a,), lambda g: a._accumulate(2.0 * a.value * g), "square")


def absolute(a) -> Tensor:
    a = lift(a)
    return _result(np.abs(a.value), (a,), lambda g: a._accumulate(np.sign(a.value) * g), "abs")


def clip(a, low: float, high: float) -> Tensor:
    a = lift(a)
    inside = (a.value >= low) & (a.value <= high)
    return _result(np.clip(a.value, low, high), (a,), lambda g: a._accumulate(np.where(inside, g, 0.0)), "clip")


# ============ Reductions and structure ============

def sum_(a, axis: Optional[int] = None) -> Tensor:
    a = lift(a)
    out = a.value.sum(axis=axis)

    def backward(g):
        grad = g if axis is None else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(grad, a.shape).copy())

    return _result(out, (a,), backward, "sum")


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = lift(a)
    count = a.value.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError("mean over an empty axis")
    out = a.value.mean(axis=axis)

    def backward(g):
        grad = g if axis is None else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(grad / count, a.shape).copy())

    return _result(out, (a,), backward, "mean")


def affine(x, weight, bias) -> Tensor:
    """x @ W + b for a batch x of shape (B, in), W (in, out), b (out,)."""
    x, weight, bias = lift(x), lift(weight), lift(bias)
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise ShapeError(f"affine expects (B, in), (in, out), (out,); got {x.shape}, {weight.shape}, {bias.shape}")
    if x.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise ShapeError(f"affine shape mismatch: {x.shape} @ {weight.shape} + {bias.shape}")

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.value.T)
        if weight.requires_grad:
            weight._accumulate(x.value.T @ g)
        bias._accumulate(g.sum(axis=0))

    return _result(x.value @ weight.value + bias.value, (x, weight, bias), backward, "affine")


def concat(tensors: Iterable, axis: int = 1) -> Tensor:
    parts = [lift(t) for t in tensors]
    if not parts:
        raise ShapeError("concat of nothing")
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from e
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def backward(g):
        for part, start, stop in zip(parts, bounds[:-1], bounds[1:]):
            part._accumulate(np.take(g, np.arange(start, stop), axis=axis))

    return _result(out, parts, backward, "concat")


def take(a, index) -> Tensor:
    a = lift(a)
    out = a.value[index]

    def backward(g):
        grad = np.zeros_like(a.value)
        np.add.at(grad, index, g)
        a._accumulate(grad)

    return _result(np.array(out, dtype=np.float64), (a,), backward, "take")


def reshape(a, shape: Tuple[int, ...]) -> Tensor:
    a = lift(a)
    try:
        out = a.value.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: {e}") from e
    return _result(out, (a,), lambda g: a._accumulate(g.reshape(a.shape)), "reshape")


_UFUNCS = {
    np.add: add,
    np.subtract: sub,
    np.multiply: mul,
    np.true_divide: div,
    np.negative: neg,
    np.tanh: tanh,
    np.exp: exp,
    np.log: log,
    np.square: square,
    np.absolute: absolute,
    np.minimum: minimum,
}
