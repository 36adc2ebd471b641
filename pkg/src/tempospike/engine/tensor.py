"""Dense float64 tensors with a recorded-operation tape for reverse-mode gradients.

The tape records every differentiable operation in execution order, which is a
topological order by construction, so one reverse sweep yields gradients for
every tensor that requires them. Tensors are immutable after creation except
through the optimizer, which rewrites ``.data`` in place between tapes.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


class EngineError(Exception):
    """Base error for tensor/tape failures."""


class NonFiniteError(EngineError):
    """A tensor ended up holding NaN or Inf."""


class ShapeError(EngineError):
    """Operands have incompatible shapes."""


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        # cheap screen first: any NaN/Inf poisons the sum; a finite-but-huge
        # sum overflow is re-checked elementwise before raising
        if not math.isfinite(float(arr.sum())) and not np.all(np.isfinite(arr)):
            raise NonFiniteError(
                f"non-finite values in tensor{' ' + name if name else ''} of shape {arr.shape}"
            )
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; scalars and arrays coerce to constant tensors
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)


def _coerce(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class TapeNode:
    """One recorded operation: inputs, output, and its backward rule."""

    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs: tuple[Tensor, ...], output: Tensor,
                 backward: Callable[[Array], tuple[Array | None, ...]]):
        self.inputs = inputs
        self.output = output
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations; reverse sweep computes all gradients."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def backward(self, loss: Tensor) -> dict[Tensor, Array]:
        """Gradients of a scalar loss w.r.t. every tensor that requires them.

        Deterministic: the same tape always accumulates in the same order.
        """
        if loss.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
        produced = {id(node.output) for node in self.nodes}
        if id(loss) not in produced:
            raise EngineError("loss tensor was not produced on this tape")
        grads: dict[Tensor, Array] = {loss: np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            gout = grads.get(node.output)
            if gout is None:
                continue
            for tensor, gin in zip(node.inputs, node.backward(gout)):
                if gin is None:
                    continue
                if not tensor.requires_grad and id(tensor) not in produced:
                    continue
                acc = grads.get(tensor)
                grads[tensor] = gin if acc is None else acc + gin
        return grads


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, Array]:
    return tape.backward(loss)


def record(inputs: Sequence[Tensor], out_data: Array,
           backward_fn: Callable[[Array], tuple[Array | None, ...]]) -> Tensor:
    """Create the output tensor and register the op on the active tape."""
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.nodes.append(TapeNode(tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient back down to the shape it was broadcast from."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record((a, b), a.data + b.data, back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record((a, b), a.data - b.data, back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record((a, b), a.data * b.data, back)


def div(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return record((a, b), a.data / b.data, back)


def neg(a: Tensor) -> Tensor:
    return record((a,), -a.data, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return record((a, b), a.data @ b.data, back)


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        return (np.full(a.shape, float(g)),)

    return record((a,), np.asarray(a.data.sum()), back)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def back(g):
        return (np.full(a.shape, float(g) / n),)

    return record((a,), np.asarray(a.data.mean()), back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def back(g):
        return (g.reshape(a.shape),)

    return record((a,), a.data.reshape(shape), back)


def add_n(tensors: Iterable[Tensor]) -> Tensor:
    """Sum a sequence of same-shaped tensors."""
    tensors = list(tensors)
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out
