"""Differentiable array operations used by the networks and the rate model."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .tensor import Tensor, accumulate, as_tensor, make_result

__all__ = [
    "add",
    "sub",
    "mul",
    "neg",
    "exp",
    "log",
    "matmul",
    "sigmoid",
    "softplus",
    "tanh",
    "relu",
    "elementwise",
    "sum",
    "mean",
    "concat",
    "reshape",
    "slice1d",
    "clamp_min",
    "clip",
    "ste_round",
    "bce_bits",
    "bce_logit_bits",
    "PROB_EPS",
]

PROB_EPS = 1e-9
_LOG2E = 1.0 / np.log(2.0)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _coerce(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    # plain python scalars adopt the tensor dtype so float32 paths stay float32
    if a.data.ndim == 0 and not a.requires_grad and a.dtype != b.dtype:
        a = Tensor(a.data.astype(b.dtype))
    if b.data.ndim == 0 and not b.requires_grad and b.dtype != a.dtype:
        b = Tensor(b.data.astype(a.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: accumulate(a, -g))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: accumulate(a, g * out))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.log(a.data), (a,), lambda g: accumulate(a, g / a.data))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        if a.requires_grad:
            accumulate(a, g @ b.data.T)
        if b.requires_grad:
            accumulate(b, a.data.T @ g)

    return make_result(a.data @ b.data, (a, b), back)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return make_result(out, (a,), lambda g: accumulate(a, g * out * (1 - out)))


def _softplus(x: np.ndarray) -> np.ndarray:
    # ln(1 + e^x); identity beyond 30 where e^-x is below float64 resolution
    out = np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))
    return out.astype(x.dtype, copy=False)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    return make_result(_softplus(a.data), (a,), lambda g: accumulate(a, g * expit(a.data)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_result(out, (a,), lambda g: accumulate(a, g * (1 - out * out)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_result(a.data * mask, (a,), lambda g: accumulate(a, g * mask))


_ELEMENTWISE = {"sigmoid": sigmoid, "softplus": softplus, "tanh": tanh, "relu": relu}


def elementwise(op: str, a) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(a)


def sum(a, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)

    def back(g):
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.shape))
        else:
            accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return make_result(np.asarray(a.data.sum(axis=axis)), (a,), back)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return mul(sum(a), 1.0 / n)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                accumulate(t, g[tuple(idx)])

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data.reshape(shape), (a,), lambda g: accumulate(a, g.reshape(a.shape)))


def slice1d(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        accumulate(a, full)

    return make_result(a.data[start:stop], (a,), back)


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    mask = a.data >= lo
    return make_result(np.maximum(a.data, lo), (a,), lambda g: accumulate(a, g * mask))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    out = np.clip(a.data, lo, hi).astype(a.dtype, copy=False)
    return make_result(out, (a,), lambda g: accumulate(a, g * mask))


def ste_round(a, bound: float | None = None) -> Tensor:
    """Round to nearest integer (optionally clipped); gradient passes straight through."""
    a = as_tensor(a)
    out = np.round(a.data)
    if bound is not None:
        out = np.clip(out, -bound, bound)
    return make_result(out, (a,), lambda g: accumulate(a, g))


def bce_bits(p, target, eps: float = PROB_EPS) -> Tensor:
    """Ideal code length in bits of binary ``target`` under probabilities ``p``."""
    p = as_tensor(p)
    # float64 internally: 1 - eps is not representable in float32
    t = np.asarray(target, dtype=np.float64).reshape(p.shape)
    pc = np.clip(p.data.astype(np.float64), eps, 1 - eps)
    bits = -(t * np.log2(pc) + (1 - t) * np.log2(1 - pc)).sum()
    inside = (p.data >= eps) & (p.data <= 1 - eps)

    def back(g):
        dp = -(t / pc - (1 - t) / (1 - pc)) * _LOG2E
        accumulate(p, g * dp * inside)

    return make_result(np.asarray(bits, dtype=p.dtype), (p,), back)


def bce_logit_bits(logit, target) -> Tensor:
    """:func:`bce_bits` of ``sigmoid(logit)`` computed from the logit directly.

    ``softplus(z) - t z`` never saturates, so confidently wrong predictions keep
    a gradient of ``sigmoid(z) - t`` instead of being clamped to zero.
    """
    z = as_tensor(logit)
    t = np.asarray(target, dtype=np.float64).reshape(z.shape)
    x = z.data.astype(np.float64)
    bits = (_softplus(x) - t * x).sum() * _LOG2E

    def back(g):
        accumulate(z, (g * (expit(x) - t) * _LOG2E).astype(z.dtype, copy=False))

    return make_result(np.asarray(bits, dtype=z.dtype), (z,), back)
