"""A small dense-tensor engine with reverse-mode automatic differentiation.

Tensors wrap a numpy array.  Every differentiable op records its parents and
a closure mapping the upstream gradient to one gradient per parent.  Nodes
carry a monotonically increasing creation id, so creation order is already a
topological order of the tape; :func:`backward` walks reachable nodes in
reverse creation order, visiting each exactly once.

Only leaf tensors (parameters and inputs created with ``requires_grad=True``)
keep gradients between calls, and they *accumulate*: calling backward twice
doubles them.  A parameter referenced from several places on the tape (weight
tying) therefore receives the sum of its site-local gradients for free.

Broadcasting is deliberately narrow: elementwise binary ops accept equal
shapes, or a right operand whose shape is a suffix of the left one (bias add,
position embeddings).
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

# finite stand-in for -inf in additive attention masks; exp() of it
# underflows to exactly 0.0 in both float32 and float64
MASK_VALUE = -1e9

_ids = itertools.count()
_state = threading.local()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _strict() -> bool:
    return getattr(_state, "strict", False)


@contextmanager
def strict_finite():
    """Check every forward result for NaN/Inf (slow; for debugging)."""
    prev = _strict()
    _state.strict = True
    try:
        yield
    finally:
        _state.strict = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values produced by {what}")


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, what: str) -> Tensor:
    if _strict():
        _check_finite(data, what)
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def _check_suffix(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ----------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    b = as_tensor(b, dtype=a.dtype)
    _check_suffix(a, b, "add")

    def back(g):
        return g, _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    b = as_tensor(b, dtype=a.dtype)
    _check_suffix(a, b, "sub")

    def back(g):
        return g, -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), back, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    b = as_tensor(b, dtype=a.dtype)
    _check_suffix(a, b, "mul")

    def back(g):
        return g * b.data, _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), back, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_constant(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-differentiable array broadcast by numpy rules (attention masks)."""
    const = np.asarray(const, dtype=a.dtype)
    try:
        out = a.data + const
    except ValueError:
        raise DimensionError(f"add_constant: incompatible shapes {a.shape} and {const.shape}") from None
    if out.shape != a.shape:
        raise DimensionError(f"add_constant: {const.shape} would broadcast {a.shape} to {out.shape}")
    return _make(out, (a,), lambda g: (g,), "add_constant")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    y = 0.5 * x * (1.0 + t)

    def back(g):
        dt = (1.0 - t * t) * (_GELU_C * (1.0 + 3 * 0.044715 * x2))
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _make(y, (a,), back, "gelu")


def dropout(a: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout.  ``rng=None`` means evaluation mode: identity."""
    if rng is None or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    keep = (rng.random(a.shape, dtype=np.float32) >= p).astype(a.dtype)
    keep *= 1.0 / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# ----------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _make(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def take(a: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradients scatter-add back."""
    y = a.data[index]
    if not isinstance(y, np.ndarray):
        y = np.asarray(y, dtype=a.dtype)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(y, copy=True), (a,), back, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(y, tensors, back, "concat")


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.dtype.kind not in "iu":
        raise TypeError("embedding ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table of {table.shape[0]} rows")

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(table.data[ids], (table,), back, "embedding")


# ----------------------------------------------------------------------------
# reductions / linear algebra


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    y = np.asarray(a.data.sum(axis=axis))

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(y, (a,), back, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis), 1.0 / n)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[k, n]`` or batched ``a[..., m, k] @ b[..., k, n]``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (b.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    if b.ndim == 2:
        def back(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        def back(g):
            return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return _make(a.data @ b.data, (a, b), back, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: ``x @ weight + bias`` with weight [in, out]."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"linear: incompatible shapes {x.shape} and {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise DimensionError(f"linear: bias shape {bias.shape} does not match weight {weight.shape}")
    n_in, n_out = weight.shape
    x2 = x.data.reshape(-1, n_in)
    y = x2 @ weight.data
    if bias is not None:
        y += bias.data
    y = y.reshape(x.shape[:-1] + (n_out,))

    def back(g):
        g2 = g.reshape(-1, n_out)
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(y, parents, back, "linear")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (a,), back, "softmax")


def layernorm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise the last axis, then scale by ``gamma`` and shift by ``beta``."""
    n = a.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise DimensionError(f"layernorm: gamma/beta {gamma.shape}/{beta.shape} vs input {a.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat * gamma.data + beta.data

    def back(g):
        dxhat = g * gamma.data
        dx = rstd / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        lead = tuple(range(a.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(y, (a, gamma, beta), back, "layernorm")


# ----------------------------------------------------------------------------
# losses


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy over positions where ``mask`` is true."""
    targets = np.asarray(targets)
    mask = np.asarray(mask, dtype=bool)
    if logits.shape[:-1] != targets.shape or mask.shape != targets.shape:
        raise DimensionError(
            f"masked_cross_entropy: logits {logits.shape}, targets {targets.shape}, mask {mask.shape}"
        )
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_cross_entropy: mask selects no positions")
    v = logits.shape[-1]
    sel = logits.data[mask]                      # [count, V]
    tgt = targets[mask]
    if tgt.min() < 0 or tgt.max() >= v:
        raise IndexError("masked_cross_entropy: target id out of range")
    z = sel - sel.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    rows = np.arange(count)
    loss = (lse - z[rows, tgt]).sum() / count

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, tgt] -= 1.0
        full = np.zeros_like(logits.data)
        full[mask] = p * (g / count)
        return (full,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), back, "masked_cross_entropy")


def mse(a: Tensor, b) -> Tensor:
    """Mean squared error over all elements; ``b`` may be a constant array."""
    b = as_tensor(b, dtype=a.dtype)
    if a.shape != b.shape:
        raise DimensionError(f"mse: incompatible shapes {a.shape} and {b.shape}")
    d = a.data - b.data
    n = d.size

    def back(g):
        ga = (2.0 / n) * g * d
        return ga, -ga

    return _make(np.asarray((d * d).sum() / n, dtype=a.dtype), (a, b), back, "mse")


def masked_mse(a: Tensor, b, mask: np.ndarray) -> Tensor:
    """MSE over the rows selected by ``mask`` (shape ``a.shape[:-1]``), all features."""
    b = as_tensor(b, dtype=a.dtype)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape or mask.shape != a.shape[:-1]:
        raise DimensionError(f"masked_mse: shapes {a.shape}, {b.shape}, mask {mask.shape}")
    rows = int(mask.sum())
    if rows == 0:
        raise ValueError("masked_mse: mask selects no positions")
    m = mask[..., None].astype(a.dtype)
    d = (a.data - b.data) * m
    n = rows * a.shape[-1]

    def back(g):
        ga = (2.0 / n) * g * d
        return ga, -ga

    return _make(np.asarray((d * d).sum() / n, dtype=a.dtype), (a, b), back, "masked_mse")


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    y = np.asarray(targets, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise DimensionError(f"bce_with_logits: shapes {logits.shape} and {y.shape}")
    z = logits.data
    n = z.size
    loss = (np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))).sum() / n

    def back(g):
        return ((_sigmoid(z) - y) * (g / n),)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), back, "bce_with_logits")


# ----------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if grad is None:
        if loss.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return

    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(p for p in node._parents if p.requires_grad)
    nodes.sort(key=lambda n: n._id, reverse=True)

    grads = {id(loss): grad}
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            prev = grads.get(key)
            grads[key] = pg if prev is None else prev + pg
