"""Dense tensors with reverse-mode automatic differentiation.

Arrays are row-major 32-bit floats by default.  Each operation records the
nodes it consumed plus a closure that maps the output gradient onto the
input gradients; :func:`backward` replays those closures in reverse
topological order.  The graph is rebuilt on every forward pass, so the
engine is define-by-run with no global state beyond the dtype/debug flags.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np

_STATE = {"dtype": np.float32, "check_finite": False}

_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def default_dtype() -> np.dtype:
    return _STATE["dtype"]


@contextmanager
def use_dtype(dtype) -> Iterator[None]:
    """Temporarily change the element dtype of newly created tensors.

    Exists for diagnostics such as finite-difference oracles that need
    float64 headroom; production training stays on float32.
    """
    old = _STATE["dtype"]
    _STATE["dtype"] = np.dtype(dtype)
    try:
        yield
    finally:
        _STATE["dtype"] = old


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf assertion applied after every op."""
    _STATE["check_finite"] = bool(enabled)


class Tensor:
    """A node in the autodiff graph wrapping a dense numpy array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the primary API.
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _slice(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)


class Parameter(Tensor):
    """A named leaf tensor updated by the optimizer."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = parents if out.requires_grad else ()
    out._backward_fn = backward_fn if out.requires_grad else None
    if _STATE["check_finite"] and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by an op")
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=t.data.dtype)
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Populate gradients of all reachable ``requires_grad`` tensors."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node(data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = as_tensor(a)
    c = float(c)

    def bwd(g):
        _accum(a, g * c)

    return _node(a.data * c, (a,), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accum(a, _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape))
        _accum(b, _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape))

    return _node(data, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _node(data, (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _node(a.data.transpose(axes), (a,), bwd)


def _slice(a: Tensor, key) -> Tensor:
    a = as_tensor(a)
    data = a.data[key]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[key] += g
        _accum(a, ga)

    return _node(np.ascontiguousarray(data), (a,), bwd)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of ``a`` along axis 0; indices may repeat."""
    a = as_tensor(a)
    idx = np.asarray(indices)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _accum(a, ga)

    return _node(np.ascontiguousarray(a.data[idx]), (a,), bwd)


def scatter_rows(rows: Tensor, indices: np.ndarray, out_len: int) -> Tensor:
    """Place ``rows`` at unique positions of a zero (out_len, ...) tensor."""
    rows = as_tensor(rows)
    idx = np.asarray(indices)
    data = np.zeros((out_len,) + rows.shape[1:], dtype=rows.data.dtype)
    data[idx] = rows.data

    def bwd(g):
        _accum(rows, g[idx])

    return _node(data, (rows,), bwd)


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _node(np.asarray(data), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * data)

    return _node(data, (a,), bwd)


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; ``floor`` clamps the argument for stability."""
    a = as_tensor(a)
    x = a.data if floor is None else np.maximum(a.data, floor)
    data = np.log(x)

    def bwd(g):
        _accum(a, g / x)

    return _node(data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - data * data))

    return _node(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    data = data.astype(x.dtype)

    def bwd(g):
        _accum(a, g * data * (1.0 - data))

    return _node(data, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bwd(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        _accum(a, g * local)

    return _node(data.astype(x.dtype), (a,), bwd)


# ---------------------------------------------------------------------------
# row-structured ops (last axis)


def softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, data * (g - dot))

    return _node(data, (a,), bwd)


def log_softmax_rows(a: Tensor) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    data = shifted - lse
    soft = np.exp(data)

    def bwd(g):
        _accum(a, g - soft * g.sum(axis=-1, keepdims=True))

    return _node(data, (a,), bwd)


def logsumexp_rows(a: Tensor) -> Tensor:
    """log(sum(exp(x))) over the last axis (axis dropped)."""
    a = as_tensor(a)
    m = a.data.max(axis=-1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=-1, keepdims=True)
    data = (m + np.log(s)).squeeze(-1)

    def bwd(g):
        _accum(a, (e / s) * g[..., None])

    return _node(data, (a,), bwd)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * data).mean(axis=-1, keepdims=True)
        _accum(a, inv * (g - gm - data * gy))

    return _node(data.astype(a.data.dtype), (a,), bwd)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale the rest."""
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype)
    keep /= 1.0 - rate

    def bwd(g):
        _accum(a, g * keep)

    return _node(a.data * keep, (a,), bwd)


def mean_over_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Average (B, L, D) rows over positions where ``mask`` (B, L) is true."""
    a = as_tensor(a)
    m = np.asarray(mask, dtype=a.data.dtype)
    if a.ndim != 3 or m.shape != a.shape[:2]:
        raise ShapeError(f"mean_over_mask: got value shape {a.shape}, mask shape {m.shape}")
    counts = m.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("mean_over_mask: a row has an all-false mask")
    data = (a.data * m[:, :, None]).sum(axis=1) / counts[:, None]
    w = (m / counts[:, None])[:, :, None]

    def bwd(g):
        _accum(a, g[:, None, :] * w)

    return _node(data.astype(a.data.dtype), (a,), bwd)


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm."""
    a = as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    if np.any(norms == 0):
        row = int(np.argwhere(norms.reshape(-1) == 0)[0][0])
        raise ValueError(f"l2_normalize_rows: row {row} has zero norm")
    data = a.data / norms

    def bwd(g):
        s = (g * data).sum(axis=-1, keepdims=True)
        _accum(a, (g - data * s) / norms)

    return _node(data, (a,), bwd)
