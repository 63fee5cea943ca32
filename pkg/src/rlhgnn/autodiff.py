"""Reverse-mode autodiff over numpy arrays, limited to the ops the models need.

Every Var holds a float64 ndarray. Ops record a closure that maps the output
gradient to per-parent gradients; backward() walks the tape in reverse
topological order. No broadcasting beyond what the ops below implement.
"""
from __future__ import annotations

import numpy as np

Array = np.ndarray


def _as_f64(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Var:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "bw")

    def __init__(self, value, parents=(), bw=None):
        self.value = _as_f64(value)
        self.parents: tuple[Var, ...] = parents
        self.bw = bw  # callable(grad_out) -> tuple of parent grads
        self.grad: Array | None = None

    @property
    def shape(self):
        return self.value.shape

    def check_finite(self, what: str = "tensor") -> "Var":
        if not np.all(np.isfinite(self.value)):
            raise ValueError(f"non-finite values in {what}")
        return self


def param(value) -> Var:
    """Leaf variable holding trainable values."""
    return Var(value)


def const(value) -> Var:
    return Var(value)


def _unbroadcast(grad: Array, shape) -> Array:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def add(a: Var, b: Var) -> Var:
    out = Var(a.value + b.value, (a, b))
    out.bw = lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape))
    return out


def sub(a: Var, b: Var) -> Var:
    out = Var(a.value - b.value, (a, b))
    out.bw = lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape))
    return out


def mul(a: Var, b: Var) -> Var:
    out = Var(a.value * b.value, (a, b))
    out.bw = lambda g: (
        _unbroadcast(g * b.value, a.value.shape),
        _unbroadcast(g * a.value, b.value.shape),
    )
    return out


def div(a: Var, b: Var) -> Var:
    out = Var(a.value / b.value, (a, b))
    out.bw = lambda g: (
        _unbroadcast(g / b.value, a.value.shape),
        _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
    )
    return out


def scale(a: Var, s: float) -> Var:
    out = Var(a.value * s, (a,))
    out.bw = lambda g: (g * s,)
    return out


def mul_const(a: Var, c) -> Var:
    """Multiply by a constant array (e.g. a dropout mask); no grad for c."""
    c = _as_f64(c)
    out = Var(a.value * c, (a,))
    out.bw = lambda g: (_unbroadcast(g * c, a.value.shape),)
    return out


def add_const(a: Var, c) -> Var:
    c = _as_f64(c)
    out = Var(a.value + c, (a,))
    out.bw = lambda g: (_unbroadcast(g, a.value.shape),)
    return out


def matmul(a: Var, b: Var) -> Var:
    out = Var(a.value @ b.value, (a, b))
    out.bw = lambda g: (g @ b.value.T, a.value.T @ g)
    return out


def relu(a: Var) -> Var:
    mask = a.value > 0
    out = Var(a.value * mask, (a,))
    out.bw = lambda g: (g * mask,)
    return out


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    mask = a.value > 0
    out = Var(np.where(mask, a.value, slope * a.value), (a,))
    out.bw = lambda g: (np.where(mask, g, slope * g),)
    return out


def exp(a: Var) -> Var:
    v = np.exp(a.value)
    out = Var(v, (a,))
    out.bw = lambda g: (g * v,)
    return out


def log(a: Var) -> Var:
    out = Var(np.log(a.value), (a,))
    out.bw = lambda g: (g / a.value,)
    return out


def total_sum(a: Var) -> Var:
    out = Var(a.value.sum(), (a,))
    out.bw = lambda g: (np.full_like(a.value, float(g)),)
    return out


def total_mean(a: Var) -> Var:
    n = a.value.size
    out = Var(a.value.sum() / n, (a,))
    out.bw = lambda g: (np.full_like(a.value, float(g) / n),)
    return out


def sum_cols(a: Var) -> Var:
    """Row-wise sum: (n, k) -> (n,)."""
    out = Var(a.value.sum(axis=1), (a,))
    out.bw = lambda g: (np.repeat(g[:, None], a.value.shape[1], axis=1),)
    return out


def gather_rows(a: Var, idx) -> Var:
    idx = np.asarray(idx, dtype=np.intp)
    out = Var(a.value[idx], (a,))

    def bw(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    out.bw = bw
    return out


def segment_sum(a: Var, starts, lengths) -> Var:
    """Sum contiguous row segments: (n, k) -> (m, k) with m = len(starts)."""
    starts = np.asarray(starts, dtype=np.intp)
    lengths = np.asarray(lengths, dtype=np.intp)
    v = np.add.reduceat(a.value, starts, axis=0) if len(starts) else np.zeros((0,) + a.value.shape[1:])
    out = Var(v, (a,))
    out.bw = lambda g: (np.repeat(g, lengths, axis=0),)
    return out


def repeat_rows(a: Var, lengths) -> Var:
    """Repeat row i lengths[i] times (inverse layout of segment_sum)."""
    lengths = np.asarray(lengths, dtype=np.intp)
    out = Var(np.repeat(a.value, lengths, axis=0), (a,))
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))

    def bw(g):
        if len(starts) == 0:
            return (np.zeros_like(a.value),)
        return (np.add.reduceat(g, starts, axis=0),)

    out.bw = bw
    return out


def vstack(parts: list[Var]) -> Var:
    sizes = [p.value.shape[0] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=0), tuple(parts))
    offs = np.concatenate(([0], np.cumsum(sizes)))
    out.bw = lambda g: tuple(g[offs[i]:offs[i + 1]] for i in range(len(parts)))
    return out


def hstack(parts: list[Var]) -> Var:
    sizes = [p.value.shape[1] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=1), tuple(parts))
    offs = np.concatenate(([0], np.cumsum(sizes)))
    out.bw = lambda g: tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(parts)))
    return out


def slice_cols(a: Var, lo: int, hi: int) -> Var:
    out = Var(a.value[:, lo:hi], (a,))

    def bw(g):
        ga = np.zeros_like(a.value)
        ga[:, lo:hi] = g
        return (ga,)

    out.bw = bw
    return out


def reshape(a: Var, shape) -> Var:
    out = Var(a.value.reshape(shape), (a,))
    out.bw = lambda g: (g.reshape(a.value.shape),)
    return out


def square(a: Var) -> Var:
    out = Var(a.value * a.value, (a,))
    out.bw = lambda g: (2.0 * g * a.value,)
    return out


def _topo(root: Var) -> list[Var]:
    order: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Var) -> None:
    """Accumulate d(root)/d(leaf) into .grad of every reachable Var.

    root must be scalar. Existing .grad values on the tape are overwritten.
    """
    if root.value.ndim != 0:
        raise ValueError("backward expects a scalar root")
    order = _topo(root)
    for node in order:
        node.grad = None
    root.grad = np.asarray(1.0)
    for node in reversed(order):
        if node.grad is None or node.bw is None:
            continue
        for parent, g in zip(node.parents, node.bw(node.grad)):
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g
