"""Dense tensors with reverse-mode automatic differentiation.

Every value flowing through the networks is a :class:`Tensor` wrapping a
contiguous numpy buffer.  Operations executed while gradient recording is
enabled link their output to their inputs together with a backward rule;
:meth:`Tensor.backward` walks that graph in reverse topological order.

Image tensors use channel-last layout ``[N, H, W, C]``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_RANK = 4

_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """Misuse of the autodiff graph (non-scalar loss, double backward, ...)."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = np.float64 if arr.dtype == np.float64 else np.float32
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds maximum rank {MAX_RANK}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"
        self._consumed = False

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> Tensor:
        return Tensor(self.data, dtype=self.data.dtype)

    def astype(self, dtype) -> Tensor:
        """Differentiable dtype cast."""
        src = self.data.dtype
        return _make(self.data.astype(dtype), (self,), lambda g: (g.astype(src),), "cast")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, op={self._op})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axes=None) -> Tensor:
        return reduce("sum", self, axes)

    def mean(self, axes=None) -> Tensor:
        return reduce("mean", self, axes)

    # -- autodiff ---------------------------------------------------------
    def backward(self) -> None:
        """Populate ``.grad`` of every reachable leaf that requires grad.

        Leaf gradients accumulate across calls on *different* graphs; calling
        backward twice on the same graph raises :class:`GraphError`.
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild the forward pass first")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor that requires grad")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._consumed = True
            node._parents = ()
            node._backward = None
        self._consumed = True


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _lift(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype), dtype=like.dtype)


def as_tensor(value, dtype=None) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, dtype=dtype)


# ---------------------------------------------------------------------------
# creation
# ---------------------------------------------------------------------------

def create(shape, init: str = "zeros", *, value: float = 0.0, mean: float = 0.0, std: float = 1.0,
           seed: int | None = None, dtype=np.float32, requires_grad: bool = False,
           name: str | None = None) -> Tensor:
    """Allocate a tensor filled with zeros, a constant or seeded normal draws."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"all extents must be >= 1, got {shape}")
    if init == "zeros":
        data = np.zeros(shape, dtype=dtype)
    elif init == "constant":
        data = np.full(shape, value, dtype=dtype)
    elif init == "normal":
        if std < 0:
            raise ValueError(f"std must be non-negative, got {std}")
        if seed is None:
            raise ValueError("normal init requires an explicit seed")
        rng = np.random.default_rng(seed)
        data = rng.normal(mean, std, size=shape).astype(dtype)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad, dtype=dtype, name=name)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log of a non-positive value")
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1 + e)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = sigmoid_array(a.data)
    return _make(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _make(out, (a,), lambda g: (g * sigmoid_array(x),), "softplus")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(a.data > 0, 1, alpha).astype(a.dtype)
    return _make(a.data * slope, (a,), lambda g: (g * slope,), "leaky_relu")


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


_UNARY = {
    "log": log, "exp": exp, "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
    "softplus": softplus, "abs": absolute, "square": square,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None, *, alpha: float = 0.2,
                c: float = 1.0) -> Tensor:
    """Dispatch an elementwise op by name.

    ``kind`` is one of add, sub, mul (binary), log, exp, tanh, sigmoid, relu,
    softplus, abs, square (unary), ``leaky_relu`` (uses ``alpha``) or
    ``scale`` (uses ``c``).
    """
    if kind in _BINARY:
        if b is None:
            raise ValueError(f"{kind} needs two operands")
        return _BINARY[kind](a, b)
    if kind in _UNARY:
        return _UNARY[kind](a)
    if kind == "leaky_relu":
        return leaky_relu(a, alpha)
    if kind == "scale":
        return scale(a, c)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {src} into {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate ``[N, H, W, C_i]`` tensors along the channel axis."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or t.shape[:-1] != lead:
            raise ShapeError(f"concat_channels leading extents differ: {tensors[0].shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[-1] for t in tensors])
    out = np.concatenate([t.data for t in tensors], axis=-1)

    def backward(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _make(out, tuple(tensors), backward, "concat")


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= a.shape[-1]:
        raise ShapeError(f"channel slice [{start}:{stop}) out of range for {a.shape}")
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _make(np.ascontiguousarray(a.data[..., start:stop]), (a,), backward, "slice")


def _normalize_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} invalid for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce(kind: str, a: Tensor, axes=None) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None); reduced axes are dropped."""
    ax = _normalize_axes(axes, a.ndim)
    shape = a.shape
    kept = tuple(1 if i in ax else s for i, s in enumerate(shape))
    if kind == "sum":
        out = a.data.sum(axis=ax)
        return _make(np.asarray(out, dtype=a.dtype), (a,),
                     lambda g: (np.broadcast_to(g.reshape(kept), shape).copy(),), "sum")
    if kind == "mean":
        count = int(np.prod([shape[i] for i in ax])) if ax else 1
        out = a.data.mean(axis=ax)
        inv = a.dtype.type(1.0 / count)
        return _make(np.asarray(out, dtype=a.dtype), (a,),
                     lambda g: (np.broadcast_to(g.reshape(kept) * inv, shape).copy(),), "mean")
    raise ValueError(f"unknown reduction {kind!r}")


def tensor_sum(a: Tensor, axes=None) -> Tensor:
    return reduce("sum", a, axes)


def tensor_mean(a: Tensor, axes=None) -> Tensor:
    return reduce("mean", a, axes)


mean = tensor_mean


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def all_finite(t: Tensor) -> bool:
    return bool(np.isfinite(t.data).all())


def custom_op(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
    """Register an op whose forward was computed outside this module."""
    return _make(data, parents, backward, op)
