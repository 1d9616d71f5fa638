"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive computes its forward value with numpy and, when a tape is
active and one of its inputs requires a gradient, appends a ``TapeEntry``
holding a closure that maps the output gradient to input gradients.
``backward`` replays the tape in reverse.

Shapes are batch-first throughout: a sentence batch is ``(B, T, D)``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

DTYPE = np.float64
# grad_check widens this while it evaluates finite differences
_compute_dtype = DTYPE


class Tensor:
    """An n-d float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=_compute_dtype)
        self.data = arr if arr.flags.c_contiguous else np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    def __rmul__(self, other):
        return hadamard(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; ops executed inside the block are recorded.
    A tape is owned by one thread.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()

    def __len__(self) -> int:
        return len(self.entries)


class no_tape:
    """Suspend recording inside the block (used by numeric differentiation)."""

    def __enter__(self):
        _stack().append(None)

    def __exit__(self, *exc):
        _stack().pop()


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def _emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result = Tensor(out, requires_grad=True)
        tape.entries.append(TapeEntry(op, tuple(inputs), result, backward))
        return result
    return Tensor(out)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``grad`` on every leaf reachable from ``loss``.

    Leaf gradients accumulate into any existing ``grad``; callers zero them
    between optimisation steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(e.output) for e in tape.entries}
    if id(loss) not in produced:
        raise ContractError("loss tensor was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key not in produced:
                leaves[key] = t
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit("sub", a.data - b.data, (a, b), back)


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("hadamard", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("hadamard", a.data * b.data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` with leading batch dims broadcast; both operands at least 2-d."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dims differ, {a.shape} @ {b.shape} ({a.shape[-1]} != {b.shape[-2]})"
        )

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit("matmul", a.data @ b.data, (a, b), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return np.split(g, bounds, axis=axis)

    return _emit("concat", out, tensors, back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {[t.shape for t in tensors]}: {exc}") from None

    def back(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _emit("stack", out, tensors, back)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _emit("relu", np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError(f"softmax: empty axis {axis} in shape {a.shape}")
    e = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", y, (a,), back)


def cumsum(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def back(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _emit("cumsum", np.cumsum(a.data, axis=axis), (a,), back)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError(f"logsumexp: empty axis {axis} in shape {a.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = (m + np.log(s)).squeeze(axis)
    p = e / s

    def back(g):
        return (np.expand_dims(g, axis) * p,)

    return _emit("logsumexp", out, (a,), back)


def max_over_time(a: Tensor, axis: int = -2) -> Tensor:
    """Per-channel maximum along the time axis; gradient goes to the first argmax."""
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ShapeError(f"max_over_time: empty axis {axis} in shape {a.shape}")
    idx = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def back(g):
        z = np.zeros_like(a.data)
        np.put_along_axis(z, idx, np.expand_dims(g, axis), axis=axis)
        return (z,)

    return _emit("max_over_time", out, (a,), back)


def dropout(a: Tensor, p: float, seed: int | None = None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``training`` is false or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout: p must satisfy 0 <= p < 1, got {p}")
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    keep = (np.random.default_rng(seed).random(a.shape) >= p) / (1.0 - p)
    return _emit("dropout", a.data * keep, (a,), lambda g: (g * keep,))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _emit("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)
    out = a.data[index]

    def back(g):
        z = np.zeros_like(a.data)
        z[index] += g
        return (z,)

    return _emit("getitem", np.array(out), (a,), back)


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup ``table[idx]`` (embedding lookup); repeated rows accumulate."""
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-d, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {table.shape[0]} rows")

    def back(g):
        z = np.zeros_like(table.data)
        np.add.at(z, idx, g)
        return (z,)

    return _emit("gather_rows", table.data[idx], (table,), back)


def cumax(x: Tensor, axis: int = -1) -> Tensor:
    """Cumulative sum of softmax: a monotone gate vector ending at one."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise ShapeError(f"cumax: empty axis {axis} in shape {x.shape}")
    return cumsum(softmax(x, axis=axis), axis=axis)


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "hadamard": hadamard,
    "concat": concat,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "cumsum": cumsum,
    "logsumexp": logsumexp,
    "max_over_time": max_over_time,
    "dropout": dropout,
}


def apply_primitive(op: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ConfigError(f"unknown primitive {op!r}") from None
    if op == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-4) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` may close over other tensors; ``x`` is perturbed in place and
    restored, so ``x`` can be a parameter referenced inside ``f``. The
    numeric estimate combines steps ``eps`` and ``eps/2`` (Richardson) to
    cancel the eps**2 truncation term, and the perturbed evaluations run in
    extended precision where the platform has it. Otherwise coordinates
    whose true gradient is orders of magnitude below the loss drown in
    float64 roundoff of the differences.
    """
    global _compute_dtype
    saved_flag, saved_grad, saved_data = x.requires_grad, x.grad, x.data
    x.requires_grad, x.grad = True, None
    try:
        with Tape() as tape:
            y = f(x)
        if y.data.size != 1:
            raise ContractError(f"grad_check: f must be scalar-valued, got shape {y.shape}")
        backward(tape, y)
        analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).reshape(-1)
        _compute_dtype = np.longdouble
        x.data = saved_data.astype(np.longdouble)
        flat = x.data.reshape(-1)
        numeric = np.empty(flat.size)

        def central(i, h):
            orig = flat[i]
            flat[i] = orig + h
            up = f(x).data.reshape(())
            flat[i] = orig - h
            down = f(x).data.reshape(())
            flat[i] = orig
            return (up - down) / (2 * np.longdouble(h))

        with no_tape():
            for i in range(flat.size):
                numeric[i] = (4 * central(i, eps / 2) - central(i, eps)) / 3
    finally:
        _compute_dtype = DTYPE
        x.requires_grad, x.grad, x.data = saved_flag, saved_grad, saved_data
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
