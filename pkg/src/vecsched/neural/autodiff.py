"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tensor` wraps a numpy array. While a :class:`Tape` is active, every
primitive records (inputs, output, backward closure); ``Tape.gradient``
replays the records in reverse, accumulating adjoints into ``Tensor.grad``.
Outside a tape the same primitives just compute values, so rollouts and
training share one forward implementation bit for bit.

Only the operations the policy network needs are provided; everything stays
float64 and single-threaded, so replay is deterministic.
"""

from __future__ import annotations

import contextlib
import math
import threading
from typing import Callable, Sequence

import numpy as np

# recording state is per-thread: parallel workers must not see each other's tapes
_STATE = threading.local()


def _active() -> list["Tape"]:
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = _STATE.stack = []
    return stack


class Tensor:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    # arithmetic sugar; the right operand may be a Tensor or a python scalar
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Recorded primitives enabling exact reverse-mode gradients."""

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        _active().append(self)
        return self

    def __exit__(self, *exc):
        _active().pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        """Adjoints of a scalar ``loss`` with respect to each source tensor."""
        if not self._records:
            raise ValueError("tape is empty; record the loss inside `with Tape()`")
        if loss.value.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        seen: set[int] = set()
        for inputs, out, _ in self._records:
            for t in (out, *inputs):
                if id(t) not in seen:
                    seen.add(id(t))
                    t.grad = None
        for src in sources:
            if id(src) not in seen:
                src.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for inputs, out, backward in reversed(self._records):
            if out.grad is None:
                continue
            for t, g in zip(inputs, backward(out.grad)):
                if g is None:
                    continue
                t.grad = g if t.grad is None else t.grad + g
        return [
            src.grad if src.grad is not None else np.zeros_like(src.value)
            for src in sources
        ]


@contextlib.contextmanager
def no_recording():
    """Run the enclosed forward computation without recording."""
    stack = _active()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


def _record(inputs: tuple[Tensor, ...], out: Tensor, backward: Callable) -> Tensor:
    stack = _active()
    if stack:
        stack[-1]._records.append((inputs, out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value + b.value)
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value - b.value)
    return _record(
        (a, b),
        out,
        lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value * b.value)
    return _record(
        (a, b),
        out,
        lambda g: (
            _unbroadcast(g * b.value, a.value.shape),
            _unbroadcast(g * a.value, b.value.shape),
        ),
    )


def matvec(m: Tensor, v: Tensor) -> Tensor:
    out = Tensor(m.value @ v.value)
    return _record((m, v), out, lambda g: (np.outer(g, v.value), m.value.T @ g))


def dot(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.value @ b.value)
    return _record((a, b), out, lambda g: (g * b.value, g * a.value))


def concat(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    out = Tensor(np.concatenate([p.value for p in parts]))
    sizes = [p.value.shape[0] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits))

    return _record(tuple(parts), out, backward)


def stack(scalars: Sequence[Tensor]) -> Tensor:
    scalars = list(scalars)
    out = Tensor(np.array([s.value for s in scalars]))

    def backward(g):
        return tuple(np.asarray(g[i]) for i in range(len(scalars)))

    return _record(tuple(scalars), out, backward)


def index(v: Tensor, i: int) -> Tensor:
    out = Tensor(v.value[i])

    def backward(g):
        gi = np.zeros_like(v.value)
        gi[i] = g
        return (gi,)

    return _record((v,), out, backward)


def take_row(m: Tensor, i: int) -> Tensor:
    out = Tensor(m.value[i])

    def backward(g):
        gm = np.zeros_like(m.value)
        gm[i] = g
        return (gm,)

    return _record((m,), out, backward)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    out = Tensor(y)
    return _record((x,), out, lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.value))
    out = Tensor(y)
    return _record((x,), out, lambda g: (g * y * (1.0 - y),))


def elu(x: Tensor) -> Tensor:
    # expm1 only on the negative branch so large positives cannot overflow
    y = np.where(x.value > 0.0, x.value, np.expm1(np.minimum(x.value, 0.0)))
    out = Tensor(y)
    return _record((x,), out, lambda g: (g * np.where(x.value > 0.0, 1.0, y + 1.0),))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    y = np.where(x.value > 0.0, x.value, slope * x.value)
    out = Tensor(y)
    return _record((x,), out, lambda g: (g * np.where(x.value > 0.0, 1.0, slope),))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)
    out = Tensor(y)
    return _record((x,), out, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.value))
    return _record((x,), out, lambda g: (g / x.value,))


def total(x: Tensor) -> Tensor:
    out = Tensor(x.value.sum())
    return _record((x,), out, lambda g: (g * np.ones_like(x.value),))


def mean(x: Tensor) -> Tensor:
    n = x.value.size
    out = Tensor(x.value.mean())
    return _record((x,), out, lambda g: (g * np.full_like(x.value, 1.0 / n),))


def softmax(x: Tensor) -> Tensor:
    # shifting by the max is value-invariant, so the Jacobian is unaffected
    z = np.exp(x.value - x.value.max())
    y = z / z.sum()
    out = Tensor(y)
    return _record((x,), out, lambda g: (y * (g - float(g @ y)),))


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.value - x.value.max()
    log_z = math.log(np.exp(shifted).sum())
    out = Tensor(shifted - log_z)
    soft = np.exp(shifted - log_z)
    return _record((x,), out, lambda g: (g - soft * g.sum(),))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.value <= b.value
    out = Tensor(np.where(take_a, a.value, b.value))
    return _record(
        (a, b),
        out,
        lambda g: (
            _unbroadcast(g * take_a, a.value.shape),
            _unbroadcast(g * ~take_a, b.value.shape),
        ),
    )


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(x.value, lo, hi))
    inside = (x.value >= lo) & (x.value <= hi)
    return _record((x,), out, lambda g: (g * inside,))
