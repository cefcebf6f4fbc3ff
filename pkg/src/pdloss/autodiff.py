"""Minimal reverse-mode differentiation over dense float64 arrays.

Every op on tensors that require gradients appends an entry to one global
:class:`ComputationRecord`.  :func:`backward` walks that record in reverse,
accumulates gradients per node id, and then clears it.  Records are not
reentrant: build one loss, call ``backward`` once, repeat.

Only the op set needed by the embedding network and the losses is provided.
Elementwise binary ops accept operands of identical shape, or a 0-d operand
(python scalars are promoted to constants).
"""
from __future__ import annotations

import itertools
from collections.abc import Callable, Sequence
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, EmptySetError

_ids = itertools.count()


@dataclass
class OpEntry:
    kind: str
    inputs: tuple[int, ...]
    needs_grad: tuple[bool, ...]
    output: int
    # maps upstream gradient -> one gradient per input (None where not needed)
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class ComputationRecord:
    entries: list[OpEntry] = field(default_factory=list)
    enabled: bool = True

    def append(self, entry: OpEntry) -> None:
        self.entries.append(entry)

    def reset(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_RECORD = ComputationRecord()


def active_record() -> ComputationRecord:
    return _RECORD


@contextmanager
def no_grad():
    """Evaluate ops without recording them."""
    prev = _RECORD.enabled
    _RECORD.enabled = False
    try:
        yield
    finally:
        _RECORD.enabled = prev


class Tensor:
    """Immutable float64 array that may participate in the active record."""

    __slots__ = ("data", "requires_grad", "node_id")
    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        arr.setflags(write=False)
        t.data = arr
        t.requires_grad = requires_grad
        t.node_id = next(_ids)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __truediv__ = lambda self, other: div(self, other)
    __rtruediv__ = lambda self, other: div(other, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, other: matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(kind: str, out: np.ndarray, parents: Sequence[Tensor], grad_fn) -> Tensor:
    needs = tuple(p.requires_grad for p in parents)
    track = _RECORD.enabled and any(needs)
    t = Tensor._wrap(out, track)
    if track:
        _RECORD.append(OpEntry(kind, tuple(p.node_id for p in parents), needs, t.node_id, grad_fn))
    return t


# ---------------------------------------------------------------- elementwise

def _check_binary(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{name}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("add", a, b)
    return _emit("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("sub", a, b)
    return _emit("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("mul", a, b)
    return _emit("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("div", a, b)
    out = a.data / b.data
    return _emit("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); subgradient 0 at x = 0."""
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)

    def grad(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, 0.5 * g / out, 0.0),)

    return _emit("sqrt", out, (x,), grad)


def abs_(x: Tensor) -> Tensor:
    return _emit("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _emit("exp", out, (x,), lambda g: (g * out,))


def ln_clamped(x, floor: float = 1e-6) -> Tensor:
    """Natural log of ``max(x, floor)``.

    The backward pass uses ``1 / max(x, floor)`` even where the clamp is
    active, so an optimizer sitting in the clamped region still sees a slope
    pointing out of it.
    """
    if not floor > 0:
        raise ContractError(f"ln_clamped floor must be positive, got {floor}")
    x = as_tensor(x)
    safe = np.maximum(x.data, floor)
    return _emit("ln_clamped", np.log(safe), (x,), lambda g: (g / safe,))


# ---------------------------------------------------------------- reductions

def _ordered_sum(a: np.ndarray) -> float:
    # summing in sorted order makes reductions bitwise invariant to permutation
    return float(np.sort(a, axis=None).sum())


def sum_(x: Tensor) -> Tensor:
    return _emit("sum", np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean(v: Tensor) -> Tensor:
    n = v.size
    if n == 0:
        raise EmptySetError("mean of an empty set")
    return _emit("mean", np.asarray(_ordered_sum(v.data) / n), (v,), lambda g: (np.full(v.shape, float(g) / n),))


def variance(v: Tensor) -> Tensor:
    """Population variance (divides by n)."""
    n = v.size
    if n == 0:
        raise EmptySetError("variance of an empty set")
    flat = v.data.reshape(-1)
    # shifting by the minimum keeps constant vectors at exactly 0
    shifted = flat - flat.min()
    centered = (shifted - _ordered_sum(shifted) / n).reshape(v.shape)
    out = np.asarray(_ordered_sum(centered * centered) / n)
    return _emit("variance", out, (v,), lambda g: (float(g) * (2.0 / n) * centered,))


def logsumexp_rows(x: Tensor) -> Tensor:
    if x.ndim != 2 or x.shape[1] == 0:
        raise DimensionError(f"logsumexp_rows expects a non-empty 2-d tensor, got {x.shape}")
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=1, keepdims=True)
    out = (m + np.log(s))[:, 0]
    soft = e / s
    return _emit("logsumexp_rows", out, (x,), lambda g: (g[:, None] * soft,))


# ---------------------------------------------------------------- structural

def take(x: Tensor, flat_index) -> Tensor:
    """Gather entries of ``x`` (row-major flat positions) into a 1-d tensor."""
    idx = np.asarray(flat_index, dtype=np.intp).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise DimensionError(f"take: index out of range for tensor of size {x.size}")

    def grad(g):
        gx = np.zeros(x.size)
        np.add.at(gx, idx, g)
        return (gx.reshape(x.shape),)

    return _emit("take", x.data.reshape(-1)[idx], (x,), grad)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a 2-d tensor, got {x.shape}")
    return _emit("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")
    A, B = a.data, b.data
    return _emit("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``b`` broadcast over rows."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"affine: X {x.shape}, W {w.shape}, b {b.shape} do not agree")
    X, W = x.data, w.data
    return _emit("affine", X @ W + b.data, (x, w, b), lambda g: (g @ W.T, X.T @ g, g.sum(axis=0)))


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each row by ``max(||row||, eps)``."""
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    if x.ndim != 2:
        raise DimensionError(f"l2_normalize_rows expects a 2-d tensor, got {x.shape}")
    norms = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True))
    unclamped = norms >= eps
    denom = np.where(unclamped, norms, eps)
    y = x.data / denom

    def grad(g):
        radial = np.sum(g * y, axis=1, keepdims=True)
        return (np.where(unclamped, (g - y * radial) / denom, g / eps),)

    return _emit("l2_normalize_rows", y, (x,), grad)


def sq_dist_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise squared Euclidean distances between rows of ``a`` and ``b``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"sq_dist_matrix: shapes {a.shape} and {b.shape} disagree")
    A, B = a.data, b.data
    out = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)

    def grad(g):
        ga = 2.0 * (g.sum(axis=1)[:, None] * A - g @ B)
        gb = 2.0 * (g.sum(axis=0)[:, None] * B - g.T @ A)
        return ga, gb

    return _emit("sq_dist_matrix", out, (a, b), grad)


# ---------------------------------------------------------------- backward

class Gradients(dict):
    """Gradient map ``node_id -> ndarray`` returned by :func:`backward`."""

    def of(self, t: Tensor) -> np.ndarray:
        """Gradient for ``t``; zeros if ``t`` did not reach the loss."""
        g = self.get(t.node_id)
        return np.zeros(t.shape) if g is None else g


def backward(loss: Tensor) -> Gradients:
    """Reverse-accumulate gradients of a scalar ``loss``; clears the record."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = Gradients()
    if not loss.requires_grad:
        _RECORD.reset()
        return grads
    grads[loss.node_id] = np.ones(loss.shape)
    for entry in reversed(_RECORD.entries):
        g = grads.get(entry.output)
        if g is None:
            continue
        for nid, need, gi in zip(entry.inputs, entry.needs_grad, entry.backward(g)):
            if not need or gi is None:
                continue
            prev = grads.get(nid)
            grads[nid] = gi if prev is None else prev + gi
    _RECORD.reset()
    return grads


def numeric_gradient(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``."""
    x0 = np.array(x, dtype=np.float64)
    out = np.zeros_like(x0)
    with no_grad():
        for i in range(x0.size):
            xp = x0.copy()
            xm = x0.copy()
            xp.flat[i] += h
            xm.flat[i] -= h
            out.flat[i] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2.0 * h)
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Max relative error between ``backward`` and central differences.

    Relative error per element is ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ContractError(f"step h={h} outside [1e-7, 1e-3]")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    analytic = backward(f(leaf)).of(leaf)
    numeric = numeric_gradient(f, x0, h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
