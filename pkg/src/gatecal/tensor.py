"""Dense float64 tensors with reverse-mode differentiation.

A `Tensor` wraps a contiguous float64 ndarray. Arithmetic ops record a
tape (parent links + backward closures) whenever an input requires
gradients; otherwise they are plain numpy calls. `backward` walks the
tape once in reverse topological order.

Every value-producing operation checks its output for NaN/Inf and raises
`NumericError` instead of letting bad values propagate.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

LAYER_NORM_EPS = 1e-6

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that disables tape recording (for sampling and
    evaluation passes over trained weights)."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_needs_grad")

    def __init__(self, values, requires_grad: bool = False):
        data = _as_array(values)
        if not np.isfinite(data).all():
            raise NumericError("tensor constructed from non-finite values")
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"
        self._needs_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Operator sugar; every op lives as a module function below.
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

    def backward(self):
        """Accumulate d(self)/d(leaf) into `.grad` of every tensor that
        requires gradients. `self` must be scalar."""
        for node, g in _backprop(self).items():
            node.grad = g if node.grad is None else node.grad + g


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], backward, check: bool = True) -> Tensor:
    if check and not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._op = op
    needs = _GRAD_ENABLED[-1] and any(p._needs_grad for p in parents)
    out._needs_grad = needs
    if needs:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, "add", (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, "sub", (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, "mul", (a, b), backward)


def neg(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (-g,)

    return _make(-a.data, "neg", (a,), backward, check=False)


def matmul(a, b) -> Tensor:
    """Matrix product. Supports x @ weight (weight 2-D, x any rank >= 2)
    and stacked batched products with identical leading dimensions."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if b.ndim == 2:
        data = a.data @ b.data

        def backward(g):
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

    elif a.shape[:-2] == b.shape[:-2]:
        data = a.data @ b.data

        def backward(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return ga, gb

    else:
        raise DimensionError(f"matmul leading dimensions disagree: {a.shape} @ {b.shape}")
    return _make(data, "matmul", (a, b), backward)


def square(a) -> Tensor:
    a = _wrap(a)

    def backward(g):
        return (2.0 * a.data * g,)

    return _make(a.data * a.data, "square", (a,), backward)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(np.asarray(data), "sum", (a,), backward, check=False)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = _wrap(a)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    data = a.data * sig

    def backward(g):
        return (g * sig * (1.0 + a.data * (1.0 - sig)),)

    return _make(data, "silu", (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        return ((g - dot) * p,)

    return _make(p, "softmax", (a,), backward)


def layer_norm(a, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean, unit variance.

    No learned affine: scale and shift are supplied externally by the
    conditioning modulation. Variance is biased (divided by d) with eps
    added before the square root.
    """
    a = _wrap(a)
    d = a.shape[-1] if a.ndim else 0
    if d < 2:
        raise ContractError(f"layer_norm needs a normalized axis of size >= 2, got {d}")
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = centered * inv_std

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv_std * (g - gm - y * gym),)

    return _make(y, "layer_norm", (a,), backward)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _wrap(a)
    shape = tuple(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), "reshape", (a,), backward, check=False)


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _make(a.data.transpose(axes), "transpose", (a,), backward, check=False)


def concat(parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = tuple(_wrap(p) for p in parts)
    sizes = [p.shape[axis] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(parts))
        )

    return _make(data, "concat", parts, backward, check=False)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    a = _wrap(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def backward(g):
        full = np.zeros(a.shape)
        full[index] = g
        return (full,)

    return _make(a.data[index].copy(), "narrow", (a,), backward, check=False)


def _backprop(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar `loss` for every tensor that requires grad."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent._needs_grad and id(parent) not in seen:
                stack.append((parent, False))

    flows: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    result: dict[Tensor, np.ndarray] = {}
    for node in reversed(topo):
        g = flows.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            result[node] = result[node] + g if node in result else g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent._needs_grad:
                continue
            key = id(parent)
            if key in flows:
                flows[key] = flows[key] + pg
            else:
                flows[key] = pg
    return result


def gradients(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """d(loss)/d(param) for each param, without touching `.grad` slots.

    Verified against central finite differences in the test suite."""
    table = _backprop(loss)
    return [table.get(p, np.zeros(p.shape)) for p in params]
