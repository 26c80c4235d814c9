"""Minimal dense-tensor reverse-mode autodiff.

Every value is a float64 numpy array wrapped in a :class:`Tensor`. Operations
record their inputs and a backward closure; :meth:`Tensor.backward` walks the
recorded graph once in reverse topological order and accumulates gradients
into every reachable tensor that requires them.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError, UsageError

_DEBUG = os.environ.get("DADA_DEBUG", "") not in ("", "0")


def set_debug(flag: bool) -> None:
    """Toggle the finite-value check performed after every forward op."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """A float64 array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = None
        out.op = op
        out.name = None
        if _DEBUG and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite output from op '{op}'")
        return out

    @staticmethod
    def zeros(shape, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad=requires_grad)

    # -- introspection ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def values(self) -> np.ndarray:
        """Row-major flat view of the data."""
        return self.data.reshape(-1)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_not_scalar(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- gradients -------------------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    def backward(self) -> None:
        """Fill ``grad`` on every reachable tensor that requires it.

        Gradients add to whatever is already stored, so two calls without
        zeroing in between double the result.
        """
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() on a tensor that does not require grad")
        graph = Graph.from_output(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in graph.nodes:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in node._backward(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


def _raise_not_scalar(t: Tensor):
    raise UsageError(f"item() on non-scalar tensor of shape {t.shape}")


@dataclass
class Graph:
    """Reverse-topological ordering of the nodes that feed one output."""

    nodes: list[Tensor]

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(out, False)]
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
        order.reverse()
        return cls(order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.op == "leaf"]

    def clear(self) -> None:
        """Drop gradients on every node; values are left alone."""
        for n in self.nodes:
            n.grad = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# -- binary arithmetic ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor._from_op(a.data + b.data, (a, b), "add")
    out._backward = lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor._from_op(a.data - b.data, (a, b), "sub")
    out._backward = lambda g: ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor._from_op(a.data * b.data, (a, b), "mul")
    out._backward = lambda g: (
        (a, _unbroadcast(g * b.data, a.shape)),
        (b, _unbroadcast(g * a.data, b.shape)),
    )
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor._from_op(a.data * c, (a,), "scale")
    out._backward = lambda g: ((a, g * c),)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor._from_op(a.data @ b.data, (a, b), "matmul")
    out._backward = lambda g: ((a, g @ b.data.T), (b, a.data.T @ g))
    return out


# -- unary elementwise ---------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor._from_op(np.where(mask, a.data, 0.0), (a,), "relu")
    out._backward = lambda g: ((a, g * mask),)
    return out


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(a.data >= 0, 1.0, alpha)
    out = Tensor._from_op(a.data * slope, (a,), "leaky_relu")
    out._backward = lambda g: ((a, g * slope),)
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor._from_op(t, (a,), "tanh")
    out._backward = lambda g: ((a, g * (1.0 - t * t)),)
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor._from_op(e, (a,), "exp")
    out._backward = lambda g: ((a, g * e),)
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log: input contains non-positive values")
    out = Tensor._from_op(np.log(a.data), (a,), "log")
    out._backward = lambda g: ((a, g / a.data),)
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor._from_op(a.data * a.data, (a,), "square")
    out._backward = lambda g: ((a, 2.0 * g * a.data),)
    return out


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "tanh": tanh,
    "exp": exp,
    "log": log,
}


def elementwise(tag: str, *inputs, alpha: float = 0.2, factor: float = 1.0) -> Tensor:
    """Dispatch an elementwise op by name.

    ``leaky_relu`` reads ``alpha``; ``scale`` reads ``factor``.
    """
    if tag == "leaky_relu":
        return leaky_relu(as_tensor(inputs[0]), alpha)
    if tag == "scale":
        return scale(as_tensor(inputs[0]), factor)
    try:
        fn = _ELEMENTWISE[tag]
    except KeyError:
        raise UsageError(f"unknown elementwise op {tag!r}") from None
    return fn(*[as_tensor(x) for x in inputs])


# -- reductions and reshaping ----------------------------------------------------


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor._from_op(np.asarray(a.data.sum(axis=axis)), (a,), "sum")
    shape = a.shape

    def _bw(g):
        if axis is None:
            return ((a, np.broadcast_to(g, shape)),)
        return ((a, np.broadcast_to(np.expand_dims(g, axis), shape)),)

    out._backward = _bw
    return out


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis), 1.0 / n)


def sqrt(a: Tensor) -> Tensor:
    """Square root with a zero subgradient at 0."""
    if np.any(a.data < 0):
        raise DomainError("sqrt: input contains negative values")
    r = np.sqrt(a.data)
    out = Tensor._from_op(r, (a,), "sqrt")
    safe = np.where(r > 0, r, 1.0)
    out._backward = lambda g: ((a, np.where(r > 0, g * 0.5 / safe, 0.0)),)
    return out


def norm(a: Tensor) -> Tensor:
    """Euclidean norm of all entries."""
    return sqrt(tsum(square(a)))


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.size == 0:
        return b
    if b.data.size == 0:
        return a
    if a.ndim != b.ndim:
        raise DimensionError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    ax = axis % a.ndim
    for i, (m, n) in enumerate(zip(a.shape, b.shape)):
        if i != ax and m != n:
            raise DimensionError(f"concat: shapes {a.shape} and {b.shape} differ off axis {axis}")
    split = a.shape[ax]
    out = Tensor._from_op(np.concatenate([a.data, b.data], axis=ax), (a, b), "concat")

    def _bw(g):
        ga, gb = np.split(g, [split], axis=ax)
        return ((a, ga), (b, gb))

    out._backward = _bw
    return out


def rows(a: Tensor, index) -> Tensor:
    """Select rows (leading-axis entries) by integer index array or boolean mask."""
    idx = np.asarray(index)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    out = Tensor._from_op(a.data[idx], (a,), "rows")

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return ((a, full),)

    out._backward = _bw
    return out


def gather(a: Tensor, cols) -> Tensor:
    """Per-row column pick from a rank-2 tensor.

    ``cols`` is an integer array of shape (batch,) or (batch, m) of 0-based
    column indices; the result has shape (batch,) or (batch, m).
    """
    if a.ndim != 2:
        raise DimensionError(f"gather expects rank-2 input, got {a.shape}")
    c = np.asarray(cols, dtype=np.int64)
    squeeze = c.ndim == 1
    if squeeze:
        c = c[:, None]
    if c.shape[0] != a.shape[0]:
        raise DimensionError(f"gather: {c.shape[0]} index rows for {a.shape[0]} data rows")
    r = np.arange(a.shape[0])[:, None]
    picked = a.data[r, c]
    out = Tensor._from_op(picked[:, 0] if squeeze else picked, (a,), "gather")

    def _bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (np.broadcast_to(r, c.shape), c), g[:, None] if squeeze else g)
        return ((a, full),)

    out._backward = _bw
    return out


# -- softmax family -----------------------------------------------------------


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = Tensor._from_op((np.log(s) + m).squeeze(axis), (a,), "logsumexp")
    p = e / s
    out._backward = lambda g: ((a, np.expand_dims(g, axis) * p),)
    return out


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    ls = shifted - lse
    out = Tensor._from_op(ls, (a,), "log_softmax")
    p = np.exp(ls)
    out._backward = lambda g: ((a, g - p * g.sum(axis=axis, keepdims=True)),)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor._from_op(p, (a,), "softmax")
    out._backward = lambda g: ((a, p * (g - (g * p).sum(axis=axis, keepdims=True))),)
    return out


def softmax_np(logits: np.ndarray) -> np.ndarray:
    """Row softmax on a raw array, outside any graph."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# -- gradient checking ---------------------------------------------------------


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    tol: float

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __bool__(self) -> bool:
        return self.passed


def grad_check(
    f: Callable[[], Tensor],
    params: Tensor | Iterable[Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare backprop gradients of ``f`` with central differences.

    ``f`` takes no arguments and rebuilds its graph from the current parameter
    values each call. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if h <= 0:
        raise UsageError("grad_check: step h must be positive")
    plist = [params] if isinstance(params, Tensor) else list(params)

    for p in plist:
        p.grad = None
    out = f()
    again = f()
    if out.data.size != 1:
        raise UsageError("grad_check: f must return a scalar")
    if not np.array_equal(out.data, again.data):
        raise UsageError("grad_check: f is not deterministic (two forward passes differ)")
    out.backward()
    analytic = np.concatenate(
        [(p.grad if p.grad is not None else np.zeros_like(p.data)).reshape(-1) for p in plist]
    )

    numeric = []
    for p in plist:
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric.append((fp - fm) / (2.0 * h))
    numeric = np.array(numeric)
    for p in plist:
        p.grad = None
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    return GradCheckReport(analytic, numeric, rel, tol)
