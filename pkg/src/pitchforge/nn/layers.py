"""Differentiable layers built on the autodiff primitives."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import ValueArray, _data, add, matmul, mul, relu, sigmoid, sub, tanh

GRU_GATES = ("z", "r", "n")


def dense(x, weight, bias, activation: str | None = None) -> ValueArray:
    """y = x @ weight + bias, optionally through ReLU."""
    out = add(matmul(x, weight), bias)
    if activation is None:
        return out
    if activation == "relu":
        return relu(out)
    raise ValueError(f"unknown activation {activation!r}")


def gru_init(rng, input_dim: int, hidden: int, scale: float | None = None) -> dict:
    """Parameter dict for one GRU cell: W_*, U_*, b_* for gates z, r, n."""
    params = {}
    for gate in GRU_GATES:
        w_scale = scale if scale is not None else 1.0 / np.sqrt(input_dim)
        u_scale = scale if scale is not None else 1.0 / np.sqrt(hidden)
        params[f"W{gate}"] = ValueArray(rng.normal(w_scale, size=(input_dim, hidden)))
        params[f"U{gate}"] = ValueArray(rng.normal(u_scale, size=(hidden, hidden)))
        params[f"b{gate}"] = ValueArray(np.zeros(hidden))
    return params


def gru_step(x, h, p: dict) -> ValueArray:
    """One GRU step with the reset gate applied inside U_n @ h.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    n = tanh(x W_n + r * (h U_n) + b_n)
    h' = (1 - z) * n + z * h
    """
    z = sigmoid(add(add(matmul(x, p["Wz"]), matmul(h, p["Uz"])), p["bz"]))
    r = sigmoid(add(add(matmul(x, p["Wr"]), matmul(h, p["Ur"])), p["br"]))
    n = tanh(add(add(matmul(x, p["Wn"]), mul(r, matmul(h, p["Un"]))), p["bn"]))
    return add(mul(sub(1.0, z), n), mul(z, h))


def conv1d(x, kernels) -> ValueArray:
    """Same-length 1-D convolution over time.

    x: [B, T, C_in], kernels: [K, C_in, C_out] with odd K; zero padding.
    """
    kd = _data(kernels)
    xd = _data(x)
    width, c_in, _ = kd.shape
    if width % 2 == 0:
        raise ValueError(f"kernel width must be odd, got {width}")
    if xd.ndim != 3 or xd.shape[2] != c_in:
        raise ValueError(f"conv1d input {xd.shape} incompatible with kernels {kd.shape}")
    pad = width // 2
    padded = np.pad(xd, ((0, 0), (pad, pad), (0, 0)))
    windows = sliding_window_view(padded, width, axis=1)  # [B, T, C_in, K]
    out = np.einsum("btck,kco->bto", windows, kd, optimize=True)

    parents = []
    if isinstance(kernels, ValueArray):
        parents.append((kernels, lambda g: np.einsum("btck,bto->kco", windows, g, optimize=True)))
    if isinstance(x, ValueArray):

        def grad_x(g):
            gwin = np.einsum("bto,kco->btck", g, kd, optimize=True)
            gpad = np.zeros_like(padded)
            t_len = xd.shape[1]
            for k in range(width):
                gpad[:, k : k + t_len, :] += gwin[:, :, :, k]
            return gpad[:, pad : pad + t_len, :]

        parents.append((x, grad_x))
    return ValueArray(out, tuple(parents))


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_xent(logits, targets, mask=None) -> ValueArray:
    """Mean cross-entropy over unmasked rows.

    logits: [N, K]; targets: int [N]; mask: optional bool [N], True = counted.
    Gradient per row is (softmax - onehot) / n_unmasked, zero where masked.
    """
    ld = _data(logits)
    targets = np.asarray(targets, dtype=np.int64)
    n, k = ld.shape
    if targets.shape != (n,):
        raise ValueError(f"targets shape {targets.shape} != ({n},)")
    if np.any(targets < 0) or np.any(targets >= k):
        raise ValueError("target class out of range")
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    n_kept = int(keep.sum())
    if n_kept == 0:
        raise ValueError("softmax_xent needs at least one unmasked row")

    shifted = ld - ld.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted[np.arange(n), targets] - logsumexp
    loss = -logp[keep].mean()

    if not isinstance(logits, ValueArray):
        return ValueArray(loss)

    def grad_logits(g):
        probs = softmax(ld, axis=1)
        probs[np.arange(n), targets] -= 1.0
        probs[~keep] = 0.0
        return g * probs / n_kept

    return ValueArray(loss, ((logits, grad_logits),))
