"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order, which is already a topological order of the graph.
:meth:`Tape.backward` walks the records in exact reverse.

Leaf tensors created with ``requires_grad=True`` (parameters) may take part in
any tape; their ``.grad`` accumulates across backward passes until cleared.
Non-leaf tensors belong to the tape that produced them. A non-leaf from a
different tape is treated as a constant.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from sdgzsl.errors import ConfigError, ContractError, NumericError, ShapeError

_PRECISIONS = {"f32": np.float32, "f64": np.float64}
_dtype = np.float32
_grad_enabled = True


def get_dtype():
    return _dtype


def set_precision(name: str) -> None:
    global _dtype
    if name not in _PRECISIONS:
        raise ConfigError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _dtype = _PRECISIONS[name]


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default scalar type (``"f32"`` or ``"f64"``)."""
    prev = _dtype
    set_precision(name)
    try:
        yield
    finally:
        globals()["_dtype"] = prev


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")


@dataclass
class _Record:
    op: str
    out: "Tensor"
    parents: tuple
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of executed operations for one backward pass."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def tracks(self, t: "Tensor") -> bool:
        return (t.requires_grad and t.tape is None) or t.tape is self

    def record(self, out: "Tensor", parents: tuple, backward, op: str) -> None:
        out.tape = self
        out.node_id = len(self.records)
        self.records.append(_Record(op, out, parents, backward))

    def backward(self, loss: "Tensor") -> None:
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        if self.consumed:
            raise ContractError("backward already ran on this tape; record a new Tape")
        self.consumed = True
        pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for rec in reversed(self.records):
            g = pending.pop(rec.out.node_id, None)
            if g is None:
                continue
            _check_finite(g, f"{rec.op} (backward)")
            rec.out.grad = g
            for parent, pg in zip(rec.parents, rec.backward(g)):
                if pg is None or not self.tracks(parent):
                    continue
                if parent.tape is None:
                    pg = pg.astype(parent.data.dtype, copy=False)
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                elif parent.node_id in pending:
                    pending[parent.node_id] = pending[parent.node_id] + pg
                else:
                    pending[parent.node_id] = pg


def _active_tape() -> Tape | None:
    if not _grad_enabled or not Tape._stack:
        return None
    return Tape._stack[-1]


class Tensor:
    """Dense array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "tape", "node_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        else:
            arr = arr.astype(_dtype, copy=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape: Tape | None = None
        self.node_id: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(out: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    _check_finite(out, op)
    t = Tensor(out, dtype=out.dtype)
    tape = _active_tape()
    if tape is not None and any(tape.tracks(p) for p in parents):
        tape.record(t, parents, backward, op)
    return t


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(
        out, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc
    return _result(
        out, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data
    return _result(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


# ------------------------------------------------------------------ pointwise


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _result(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def relu(x: Tensor) -> Tensor:
    mask = (x.data > 0).astype(x.dtype)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1 - s),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(np.zeros((), x.dtype), x.data)
    return _result(out, (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _result(out, (x,), lambda g: (g / x.data,), "log")


def square(x: Tensor) -> Tensor:
    return _result(x.data * x.data, (x,), lambda g: (2 * g * x.data,), "square")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1 - t * t),), "tanh")


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; gradient passes only where the input is inside."""
    inside = ((x.data >= lo) & (x.data <= hi)).astype(x.dtype)
    return _result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clamp")


_POINTWISE = {
    "leaky_relu": leaky_relu,
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "square": square,
    "tanh": tanh,
}


def pointwise(op: str, x: Tensor, **kwargs) -> Tensor:
    try:
        fn = _POINTWISE[op]
    except KeyError:
        raise ConfigError(f"unknown pointwise op {op!r}") from None
    return fn(x, **kwargs)


# -------------------------------------------------------------- shape algebra


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    lead = {t.shape[:-1] if axis == -1 else t.shape[:axis] for t in tensors}
    if len(lead) != 1:
        raise ShapeError(f"concat: leading extents differ: {[t.shape for t in tensors]}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return [np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))]

    return _result(out, tuple(tensors), backward, "concat")


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns ``start:stop`` of the last axis."""
    n = x.shape[-1]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of bounds for last extent {n}")
    out = x.data[..., start:stop].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        return (full,)

    return _result(out, (x,), backward, "slice")


def gather_rows(x: Tensor, index) -> Tensor:
    """Rows of ``x`` selected by an integer index (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= x.shape[0]):
        raise ShapeError(f"gather_rows: index out of bounds for {x.shape[0]} rows")
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (x,), backward, "gather_rows")


def gather_cols(x: Tensor, index) -> Tensor:
    """Columns of a 2-D ``x`` selected by an integer index (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    if x.data.ndim != 2:
        raise ShapeError(f"gather_cols: expected a 2-D tensor, got {x.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise ShapeError(f"gather_cols: index out of bounds for {x.shape[1]} columns")
    out = x.data[:, index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (slice(None), index), g)
        return (full,)

    return _result(out, (x,), backward, "gather_cols")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


# ---------------------------------------------------------------- reductions


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), backward, "sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    return reduce_sum(x, axis, keepdims) * (1.0 / count)


def reduce(op: str, x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if op == "sum":
        return reduce_sum(x, axis, keepdims)
    if op == "mean":
        return reduce_mean(x, axis, keepdims)
    raise ConfigError(f"unknown reduction {op!r}")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def backward(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


def dropout(x: Tensor, rate: float, rng, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``training`` is False or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.uniform(x.shape) >= rate).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked ancestor of ``loss``."""
    if loss.tape is None:
        raise ContractError("loss is not on an active tape (was it computed under a Tape?)")
    loss.tape.backward(loss)
