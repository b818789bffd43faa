"""Tape-free reverse-mode autodiff over float64 numpy arrays.

A ValueArray wraps data plus links to the parents that produced it. Plain
ndarrays passed to any op are treated as constants and receive no gradient,
which keeps large feature matrices off the backward pass.
"""
from __future__ import annotations

import numpy as np


class ValueArray:
    __slots__ = ("data", "grad", "_parents")

    def __init__(self, data, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"ValueArray(shape={self.data.shape})"


def _data(x):
    return x.data if isinstance(x, ValueArray) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, out, da, db):
    parents = []
    if isinstance(a, ValueArray):
        parents.append((a, da))
    if isinstance(b, ValueArray):
        parents.append((b, db))
    return ValueArray(out, tuple(parents))


def matmul(a, b) -> ValueArray:
    ad, bd = _data(a), _data(b)
    if ad.shape[-1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    return _binary(a, b, ad @ bd, lambda g: g @ bd.T, lambda g: ad.T @ g)


def add(a, b) -> ValueArray:
    ad, bd = _data(a), _data(b)
    return _binary(
        a, b, ad + bd,
        lambda g: _unbroadcast(g, ad.shape),
        lambda g: _unbroadcast(g, bd.shape),
    )


def sub(a, b) -> ValueArray:
    ad, bd = _data(a), _data(b)
    return _binary(
        a, b, ad - bd,
        lambda g: _unbroadcast(g, ad.shape),
        lambda g: _unbroadcast(-g, bd.shape),
    )


def mul(a, b) -> ValueArray:
    ad, bd = _data(a), _data(b)
    return _binary(
        a, b, ad * bd,
        lambda g: _unbroadcast(g * bd, ad.shape),
        lambda g: _unbroadcast(g * ad, bd.shape),
    )


def relu(x) -> ValueArray:
    xd = _data(x)
    out = np.maximum(xd, 0.0)
    if not isinstance(x, ValueArray):
        return ValueArray(out)
    mask = xd > 0
    return ValueArray(out, ((x, lambda g: g * mask),))


def sigmoid(x) -> ValueArray:
    out = 1.0 / (1.0 + np.exp(-_data(x)))
    if not isinstance(x, ValueArray):
        return ValueArray(out)
    return ValueArray(out, ((x, lambda g: g * out * (1.0 - out)),))


def tanh(x) -> ValueArray:
    out = np.tanh(_data(x))
    if not isinstance(x, ValueArray):
        return ValueArray(out)
    return ValueArray(out, ((x, lambda g: g * (1.0 - out * out)),))


def concat(parts, axis: int = -1) -> ValueArray:
    datas = [_data(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, p in enumerate(parts):
        if isinstance(p, ValueArray):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            parents.append((p, lambda g, sl=tuple(sl): g[sl]))
    return ValueArray(out, tuple(parents))


def stack_time(parts) -> ValueArray:
    """Stack per-frame [B, K] nodes into [B, T, K]."""
    out = np.stack([_data(p) for p in parts], axis=1)
    parents = tuple(
        (p, lambda g, t=t: g[:, t, :]) for t, p in enumerate(parts) if isinstance(p, ValueArray)
    )
    return ValueArray(out, parents)


def reshape(x, shape) -> ValueArray:
    xd = _data(x)
    out = xd.reshape(shape)
    if not isinstance(x, ValueArray):
        return ValueArray(out)
    return ValueArray(out, ((x, lambda g: g.reshape(xd.shape)),))


def tile_rows(x, reps: int) -> ValueArray:
    """Repeat each row `reps` times: [B, D] -> [B*reps, D]."""
    xd = _data(x)
    out = np.repeat(xd, reps, axis=0)
    if not isinstance(x, ValueArray):
        return ValueArray(out)
    b, d = xd.shape
    return ValueArray(out, ((x, lambda g: g.reshape(b, reps, d).sum(axis=1)),))


def backward(root: ValueArray) -> None:
    """Accumulate gradients of `root` (summed over its entries) into every
    reachable ValueArray. Iterative topological order; safe for deep graphs."""
    topo: list[ValueArray] = []
    seen: set[int] = set()
    stack: list[tuple[ValueArray, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node.grad is None:
            continue
        for parent, fn in node._parents:
            parent.accumulate(fn(node.grad))
