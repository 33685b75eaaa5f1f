"""Reverse-mode automatic differentiation over dense numpy arrays.

Every public operation records its inputs and a backward closure on the
output tensor, so a single `backward` call on a scalar loss fills `.grad`
on every reachable tensor with `requires_grad=True`.  Arrays are float64
by default; float32 storage can be enabled via `set_default_dtype`, but
gradient checking is only meaningful in float64.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(RuntimeError):
    """A public operation produced NaN or Inf, or backward was misused."""


_DEFAULT_DTYPE = np.float64


def set_default_dtype(name: str) -> None:
    """Switch the storage precision for newly created tensors."""
    global _DEFAULT_DTYPE
    if name not in ("float32", "float64"):
        raise ValueError(f"unsupported dtype {name!r}")
    _DEFAULT_DTYPE = np.dtype(name).type


def default_dtype():
    return _DEFAULT_DTYPE


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op}")


class Tensor:
    """A dense array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Operator sugar; the actual derivative logic lives in module functions.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


class Parameter(Tensor):
    """A trainable tensor; always participates in gradient recording."""

    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    _check_finite(out_data, op)
    out = Tensor(out_data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape`, undoing numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), bwd, "add")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd, "neg")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bwd, "mul")


def sigmoid(a: Tensor) -> Tensor:
    # Stable in both tails.
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        _accum(a, g * data * (1.0 - data))

    return _make(data, (a,), bwd, "sigmoid")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0))

    return _make(data, (a,), bwd, "relu")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(data, (a,), bwd, "log")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * data)

    return _make(data, (a,), bwd, "exp")


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values; gradient passes through only inside the open interval."""
    data = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)

    def bwd(g):
        _accum(a, g * mask)

    return _make(data, (a,), bwd, "clamp")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(data, (a, b), bwd, "matmul")


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    data = np.swapaxes(a.data, -1, -2)

    def bwd(g):
        _accum(a, np.swapaxes(g, -1, -2))

    return _make(data, (a,), bwd, "transpose")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _make(data, (a,), bwd, "reshape")


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = np.broadcast_to(a.data, shape)

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))

    return _make(data.copy(), (a,), bwd, "broadcast_to")


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accum(p, piece)

    return _make(data, parts, bwd, "concat")


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    data = np.stack([p.data for p in parts], axis=axis)

    def bwd(g):
        for p, piece in zip(parts, np.moveaxis(g, axis, 0)):
            _accum(p, piece)

    return _make(data, parts, bwd, "stack")


# ---------------------------------------------------------------------------
# reductions and row-wise maps


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(gg, a.shape).copy())

    return _make(data, (a,), bwd, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row-wise softmax along `axis`, computed with max subtraction."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, data * (g - inner))

    return _make(data, (a,), bwd, "softmax")


def layer_norm(a: Tensor, scale: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply learnable scale and shift."""
    if scale.shape != a.shape[-1:] or shift.shape != a.shape[-1:]:
        raise ShapeError(
            f"layer_norm scale/shift {scale.shape}/{shift.shape} vs input {a.shape}")
    d = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = scale.data * xhat + shift.data

    def bwd(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(scale, (g * xhat).sum(axis=reduce_axes))
        _accum(shift, g.sum(axis=reduce_axes))
        if a.requires_grad:
            gx = g * scale.data
            t1 = gx.mean(axis=-1, keepdims=True)
            t2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(a, inv * (gx - t1 - xhat * t2))
        _ = d  # dimension folded into the means above

    return _make(data, (a, scale, shift), bwd, "layer_norm")


# ---------------------------------------------------------------------------
# indexed ops (edge gather / node aggregation)


def gather(a: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Select slices of `a` along `axis` by integer index (with repeats)."""
    index = np.asarray(index, dtype=np.int64)
    axis = axis % a.ndim
    if index.size and (index.min() < 0 or index.max() >= a.shape[axis]):
        raise ShapeError(f"gather index out of range for axis {axis} of {a.shape}")
    data = np.take(a.data, index, axis=axis)

    def bwd(g):
        if a.requires_grad:
            gx = np.zeros_like(a.data)
            key = (slice(None),) * axis + (index,)
            np.add.at(gx, key, g)
            _accum(a, gx)

    return _make(data, (a,), bwd, "gather")


def scatter_sum(a: Tensor, index: np.ndarray, size: int, axis: int = 0) -> Tensor:
    """Sum slices of `a` into `size` buckets along `axis`.

    Slice i of the input is added into bucket index[i]; empty buckets stay
    zero.  Accumulation follows input order, so results are reproducible
    bit-for-bit in a single thread.
    """
    index = np.asarray(index, dtype=np.int64)
    axis = axis % a.ndim
    if index.shape != (a.shape[axis],):
        raise ShapeError(f"scatter index shape {index.shape} vs axis length {a.shape[axis]}")
    if index.size and (index.min() < 0 or index.max() >= size):
        raise ShapeError(f"scatter index out of range for size {size}")
    out_shape = a.shape[:axis] + (size,) + a.shape[axis + 1:]
    data = np.zeros(out_shape, dtype=a.data.dtype)
    key = (slice(None),) * axis + (index,)
    np.add.at(data, key, a.data)

    def bwd(g):
        key2 = (slice(None),) * axis + (index,)
        _accum(a, g[key2])

    return _make(data, (a,), bwd, "scatter_sum")


# ---------------------------------------------------------------------------
# backward driver


def _toposort(root: Tensor) -> list[Tensor]:
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, groups: Iterable["ParamGroup"] | None = None) -> None:
    """Populate `.grad` on every tensor reachable from `loss`.

    `loss` must be a scalar produced by recorded operations.  When `groups`
    is given, gradients of frozen groups are forced to exact zero afterwards.
    """
    if loss.data.size != 1:
        raise NumericError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward is None and not loss._parents:
        raise NumericError("backward called on a tensor with no recorded computation")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        # Interior activations are one-shot; free their graph references.
        if node is not loss and node._backward is not None:
            node._parents = ()
            node._backward = None
    if groups is not None:
        for group in groups:
            if group.frozen:
                for p in group.params:
                    p.grad = np.zeros_like(p.data)


class ParamGroup:
    """Named collection of parameters sharing a freeze flag."""

    def __init__(self, name: str, params: Sequence[Parameter], frozen: bool = False):
        self.name = name
        self.params = list(params)
        self.frozen = frozen

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def __iter__(self):
        return iter(self.params)

    def __repr__(self) -> str:
        return f"ParamGroup({self.name!r}, n={len(self.params)}, frozen={self.frozen})"
