"""Tape-based reverse-mode differentiation over numpy arrays.

A :class:`Tape` records every operation whose inputs need gradients. Replaying
the recorded nodes in reverse order (:func:`backward`) accumulates ``.grad`` on
every leaf created with :meth:`Tape.leaf`. Tensors without a tape are plain
constants and record nothing.

Example:
    >>> tape = Tape()
    >>> w = tape.leaf(np.array([1.0, 2.0]))
    >>> loss = (w * np.array([3.0, 4.0])).sum()
    >>> backward(tape, loss)
    >>> w.grad
    array([3., 4.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import UsageError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, requires_grad: bool = False, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return mean(self)


class Tape:
    """Records nodes as ``(output, parents, vjp)`` in forward order."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._params: dict[int, list[Tensor]] = {}

    def leaf(self, data) -> Tensor:
        return Tensor(np.array(data, dtype=np.float64), requires_grad=True, tape=self)

    def register(self, owner, leaves: list[Tensor]) -> None:
        self._params[id(owner)] = leaves

    def leaves_for(self, owner) -> list[Tensor] | None:
        return self._params.get(id(owner))

    def gradients(self, owner) -> list[np.ndarray]:
        """Gradients for the parameters of ``owner`` (zeros where untouched)."""
        try:
            leaves = self._params[id(owner)]
        except KeyError:
            raise UsageError("object was not run forward on this tape") from None
        return [np.zeros_like(t.data) if t.grad is None else t.grad for t in leaves]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = next((p.tape for p in parents if p.tape is not None and p.requires_grad), None)
    if tape is None:
        return Tensor(data)
    out = Tensor(data, requires_grad=True, tape=tape)
    tape.nodes.append((out, tuple(parents), vjp))
    return out


def backward(tape: Tape | None, output: Tensor, grad=None) -> None:
    """Accumulate d(output)/d(leaf) into every leaf's ``.grad``.

    ``grad`` seeds the output gradient; it defaults to ones (so a scalar loss
    needs no seed).
    """
    if tape is None or not tape.nodes:
        raise UsageError("backward called without a recorded tape")
    if output.tape is not tape:
        raise UsageError("output was not produced on this tape")
    seed = np.ones_like(output.data) if grad is None else np.asarray(grad, dtype=np.float64)
    if seed.shape != output.data.shape:
        raise UsageError(f"seed gradient shape {seed.shape} != output shape {output.data.shape}")
    output.grad = seed.copy()
    for out, parents, vjp in reversed(tape.nodes):
        if out.grad is None:
            continue
        for p, g in zip(parents, vjp(out.grad)):
            if g is None or not p.requires_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; zero gradient where the floor is active."""
    a = as_tensor(a)
    x = np.maximum(a.data, floor) if floor > 0.0 else a.data
    active = a.data >= floor

    def vjp(g):
        return (np.where(active, g / x, 0.0),)

    return _record(np.log(x), (a,), vjp)


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(a.data.sum(axis=axis), (a,), vjp)


def mean(a) -> Tensor:
    a = as_tensor(a)
    return mul(tsum(a), 1.0 / a.data.size)


def pick(a, index) -> Tensor:
    """Row-wise gather: ``out[i] = a[i, index[i]]``."""
    a = as_tensor(a)
    rows = np.arange(a.shape[0])
    idx = np.asarray(index)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return (full,)

    return _record(a.data[rows, idx], (a,), vjp)


def take_rows(a, index) -> Tensor:
    """``a[index]`` for a 2-D tensor; repeated indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record(a.data[idx], (a,), vjp)


def concat(a, b) -> Tensor:
    """Column-wise concatenation of two ``(B, .)`` tensors."""
    a, b = as_tensor(a), as_tensor(b)
    k = a.shape[1]
    return _record(np.concatenate([a.data, b.data], axis=1), (a, b),
                   lambda g: (g[:, :k], g[:, k:]))


# -- row-wise distributions --------------------------------------------------

def softmax(logits, temperature: float = 1.0) -> Tensor:
    """Row softmax of ``logits / temperature`` (max-subtracted)."""
    z = as_tensor(logits)
    p = kernels.softmax_rows(z.data / temperature)

    def vjp(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner) / temperature,)

    return _record(p, (z,), vjp)


def log_softmax(logits) -> Tensor:
    z = as_tensor(logits)
    shifted = z.data - z.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def vjp(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _record(out, (z,), vjp)


# -- fused dense layer ------------------------------------------------------

def dense(x, w, b, act: int) -> Tensor:
    """``act(x @ w + b)`` as one tape node backed by the kernel backend."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    out = kernels.dense_forward(x.data, w.data, b.data, act)

    def vjp(g):
        dx, dw, db = kernels.dense_backward(x.data, w.data, out, g, act)
        return dx, dw, db

    return _record(out, (x, w, b), vjp)
