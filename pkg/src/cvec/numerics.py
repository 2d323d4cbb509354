"""Dense float64 tensors with a define-by-run tape for reverse-mode gradients.

Only the operations the embedding networks and combiners need are provided.
Batched inputs are supported by letting ``matmul`` broadcast over leading
axes and letting ``add``/``hadamard`` broadcast a bias-like operand.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, finite differences)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array that optionally records how it was produced."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return hadamard(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from exc


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product, broadcasting over leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: dimension mismatch {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), backward, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    """Swap the last two axes, or permute by ``axes``."""
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def backward(g, acc):
        acc(a, np.transpose(g, inverse))

    return _make(out, (a,), backward, "transpose")


def outer(e1, e2) -> Tensor:
    """Outer product of two vectors (or batches of vectors along the last axis)."""
    e1, e2 = as_tensor(e1), as_tensor(e2)
    return hadamard(reshape(e1, e1.shape + (1,)), reshape(e2, e2.shape[:-1] + (1, e2.shape[-1])))


def vectorize(a, start: int = 0) -> Tensor:
    """Row-major flattening of all axes from ``start`` onwards."""
    a = as_tensor(a)
    return reshape(a, a.shape[:start] + (-1,))


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")

    def backward(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")

    def backward(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, "sub")


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "hadamard")

    def backward(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, "hadamard")


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)

    def backward(g, acc):
        acc(a, g * c)

    return _make(a.data * c, (a,), backward, "scale")


def divide(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "divide")
    with np.errstate(all="ignore"):  # _make reports non-finite results itself
        out = a.data / b.data

    def backward(g, acc):
        if a.requires_grad:
            acc(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            acc(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), backward, "divide")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def backward(g, acc):
        acc(a, g * (1.0 - out * out))

    return _make(out, (a,), backward, "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)

    def backward(g, acc):
        acc(a, g * out * (1.0 - out))

    return _make(out, (a,), backward, "sigmoid")


@contextlib.contextmanager
def trace_kinks():
    """Record every ReLU/clamp mask computed inside the block (for gradient checks)."""
    prev = getattr(_state, "kinks", None)
    _state.kinks = masks = []
    try:
        yield masks
    finally:
        _state.kinks = prev


def _record(mask: np.ndarray) -> None:
    masks = getattr(_state, "kinks", None)
    if masks is not None:
        masks.append(mask)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    _record(mask)

    def backward(g, acc):
        acc(a, g * mask)

    return _make(a.data * mask, (a,), backward, "relu")


def identity(a) -> Tensor:
    return as_tensor(a)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(all="ignore"):
        out = np.sqrt(a.data)

    def backward(g, acc):
        acc(a, g * 0.5 / out)

    return _make(out, (a,), backward, "sqrt")


def log(a) -> Tensor:
    a = as_tensor(a)

    def backward(g, acc):
        acc(a, g / a.data)

    with np.errstate(all="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), backward, "log")


def maximum_scalar(a, floor: float) -> Tensor:
    """``max(a, floor)`` elementwise; gradient flows only where ``a`` wins."""
    a = as_tensor(a)
    mask = a.data > floor
    _record(mask)

    def backward(g, acc):
        acc(a, g * mask)

    return _make(np.where(mask, a.data, floor), (a,), backward, "maximum")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "identity": identity,
    "linear": identity,
}

_ELEMENTWISE = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "add": add,
    "hadamard": hadamard,
    "scale": scale,
}


def elementwise(op: str, *inputs) -> Tensor:
    """Dispatch by name: tanh, sigmoid, relu, add, hadamard, scale."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------------------
# reductions and normalisers


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g, acc):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        acc(a, np.broadcast_to(g, a.shape))

    return _make(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g, acc):
        acc(a, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), backward, "softmax")


def softmax_columns(a) -> Tensor:
    """Softmax over the row axis, so every column of a T x G matrix sums to one."""
    a = as_tensor(a)
    if a.ndim < 2 or a.shape[-2] < 1:
        raise ValueError("softmax_columns needs at least one row")
    return softmax(a, axis=-2)


def logsumexp(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)

    def backward(g, acc):
        acc(a, np.expand_dims(g, axis) * e / s)

    return _make(out, (a,), backward, "logsumexp")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape

    def backward(g, acc):
        acc(a, g.reshape(old))

    return _make(a.data.reshape(tuple(shape)), (a,), backward, "reshape")


def getitem(a, index) -> Tensor:
    """Basic or integer-array indexing; the gradient is scattered back."""
    a = as_tensor(a)
    out = a.data[index]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def backward(g, acc):
        acc(a, g, index)

    return _make(out.copy() if np.shares_memory(out, a.data) else out, (a,), backward, "getitem")


def take(a, indices, axis: int) -> Tensor:
    """Gather along one axis; repeated indices accumulate in the backward pass."""
    index = [slice(None)] * as_tensor(a).ndim
    index[axis] = np.asarray(indices)
    return getitem(a, tuple(index))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in ts], axis=axis)

    def backward(g, acc):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                acc(t, g[tuple(index)])

    return _make(out, ts, backward, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g, acc):
        for i, t in enumerate(ts):
            if t.requires_grad:
                acc(t, np.take(g, i, axis=axis))

    return _make(out, ts, backward, "stack")


def unbind(a, axis: int = 0) -> list[Tensor]:
    """Split into views along ``axis``; the pieces share one gradient buffer."""
    a = as_tensor(a)
    pieces = []
    for i in range(a.shape[axis]):
        index = [slice(None)] * a.ndim
        index[axis] = i
        pieces.append(getitem(a, tuple(index)))
    return pieces


def flip(a, axis: int) -> Tensor:
    a = as_tensor(a)

    def backward(g, acc):
        acc(a, np.flip(g, axis=axis))

    return _make(np.flip(a.data, axis=axis).copy(), (a,), backward, "flip")


# ---------------------------------------------------------------------------
# tape traversal


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor on the tape.

    Leaf gradients accumulate across calls; clear them with ``zero_grad``.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss was not produced by a recorded tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(t: Tensor, g: np.ndarray, index=None) -> None:
        key = id(t)
        if index is None:
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = np.array(g, dtype=np.float64, copy=True).reshape(t.shape)
        else:
            buf = grads.get(key)
            if buf is None:
                buf = grads[key] = np.zeros(t.shape)
            if _has_array(index):
                np.add.at(buf, index, g)
            else:
                buf[index] += g

    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
        else:
            node.grad = g
            node._backward(g, acc)


def _has_array(index) -> bool:
    if isinstance(index, tuple):
        return any(isinstance(i, (np.ndarray, list)) for i in index)
    return isinstance(index, (np.ndarray, list))


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
