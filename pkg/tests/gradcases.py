"""Randomised finite-difference cases covering every differentiable op.

Each case builder takes an ``rng`` and returns ``(fn, arrays)`` where ``fn``
maps float64 tensors to a scalar. Inputs of kinked ops (relu, clamps) are kept
away from their kinks so central differences are valid.
"""

from __future__ import annotations

import numpy as np

from hybrid_pcgc.autodiff import CoordSet, SparseTensor, Tensor, ops
from hybrid_pcgc.autodiff import sparse as sps
from hybrid_pcgc.smc import FactorizedDensity, density_likelihood


def _away(rng, shape, lo=0.1, hi=1.5):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _weights(rng, n):
    return rng.standard_normal(n)


def _dot(t, w):
    """Random linear read-out so every output element matters."""
    return ops.sum(ops.mul(t, Tensor(w.reshape(t.shape))))


def _coords(rng, n=12, depth=3):
    pts = np.unique(rng.integers(0, 1 << depth, (n, 3)), axis=0)
    return CoordSet(pts, depth)


def case_add(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((1, 4))
    w = _weights(rng, 12)
    return (lambda x, y: _dot(ops.add(x, y), w)), [a, b]


def case_sub(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal(4)
    w = _weights(rng, 12)
    return (lambda x, y: _dot(ops.sub(x, y), w)), [a, b]


def case_mul(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 1))
    w = _weights(rng, 12)
    return (lambda x, y: _dot(ops.mul(x, y), w)), [a, b]


def case_neg(rng):
    w = _weights(rng, 5)
    return (lambda x: _dot(ops.neg(x), w)), [rng.standard_normal(5)]


def case_exp(rng):
    w = _weights(rng, 6)
    return (lambda x: _dot(ops.exp(x), w)), [rng.standard_normal(6)]


def case_log(rng):
    w = _weights(rng, 6)
    return (lambda x: _dot(ops.log(x), w)), [rng.uniform(0.2, 3.0, 6)]


def case_matmul(rng):
    a, b = rng.standard_normal((3, 5)), rng.standard_normal((5, 2))
    w = _weights(rng, 6)
    return (lambda x, y: _dot(ops.matmul(x, y), w)), [a, b]


def _unary(name):
    def case(rng):
        w = _weights(rng, 8)
        x = _away(rng, 8, 0.05, 4.0)
        return (lambda t: _dot(ops.elementwise(name, t), w)), [x]

    case.__name__ = f"case_{name}"
    return case


case_sigmoid = _unary("sigmoid")
case_softplus = _unary("softplus")
case_tanh = _unary("tanh")
case_relu = _unary("relu")


def case_sum_axis(rng):
    w = _weights(rng, 3)
    return (lambda x: _dot(ops.sum(x, axis=1), w)), [rng.standard_normal((3, 4))]


def case_mean(rng):
    return (lambda x: ops.mul(ops.mean(ops.mul(x, x)), 3.0)), [rng.standard_normal((2, 5))]


def case_concat(rng):
    w = _weights(rng, 15)
    return (lambda x, y: _dot(ops.concat([x, y], axis=1), w)), [rng.standard_normal((3, 2)), rng.standard_normal((3, 3))]


def case_reshape_slice(rng):
    w = _weights(rng, 4)
    return (lambda x: _dot(ops.reshape(ops.slice1d(x, 2, 6), (2, 2)), w)), [rng.standard_normal(8)]


def case_clamp_min(rng):
    w = _weights(rng, 8)
    return (lambda x: _dot(ops.clamp_min(x, 0.0), w)), [_away(rng, 8)]


def case_clip(rng):
    w = _weights(rng, 8)
    x = rng.choice([-1.0, 1.0], 8) * rng.choice([rng.uniform(0.1, 0.9), rng.uniform(1.1, 2.0)], 8)
    return (lambda t: _dot(ops.clip(t, -1.0, 1.0), w)), [x]


def case_bce_bits(rng):
    target = rng.integers(0, 2, 7)
    return (lambda p: ops.bce_bits(p, target)), [rng.uniform(0.05, 0.95, 7)]


def case_bce_logit_bits(rng):
    target = rng.integers(0, 2, 7)
    return (lambda z: ops.bce_logit_bits(z, target)), [rng.normal(0, 3, 7)]


def case_sconv(rng):
    coords = _coords(rng)
    n = len(coords)
    x, wk, b = rng.standard_normal((n, 3)), rng.standard_normal((27, 3, 2)) * 0.3, rng.standard_normal(2)
    w = _weights(rng, n * 2)
    return (lambda xt, wt, bt: _dot(sps.sconv(SparseTensor(coords, xt), wt, bt).feats, w)), [x, wk, b]


def case_sparse_linear(rng):
    coords = _coords(rng)
    n = len(coords)
    w = _weights(rng, n * 3)
    return (
        lambda xt, wt, bt: _dot(sps.linear(SparseTensor(coords, xt), wt, bt).feats, w)
    ), [rng.standard_normal((n, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)]


def case_sparse_concat_add(rng):
    coords = _coords(rng)
    n = len(coords)
    w = _weights(rng, n * 4)

    def fn(a, b, c):
        sa, sb, sc = (SparseTensor(coords, t) for t in (a, b, c))
        return _dot(sps.add(sps.concat_channels(sa, sb), sc).feats, w)

    return fn, [rng.standard_normal((n, 1)), rng.standard_normal((n, 3)), rng.standard_normal((n, 4))]


def case_scale_rows(rng):
    coords = _coords(rng)
    n = len(coords)
    w = _weights(rng, n * 2)
    return (lambda x, s: _dot(sps.scale_rows(SparseTensor(coords, x), s).feats, w)), [rng.standard_normal((n, 2)), rng.standard_normal(n)]


def case_density(rng):
    dens = FactorizedDensity(init_scale=float(rng.uniform(1, 5)), seed=int(rng.integers(1000)))
    x = rng.uniform(-3, 3, 6)
    return (lambda xt, dv: ops.sum(ops.log(density_likelihood(xt, dens.split(dv))))), [x, dens.vector + rng.normal(0, 0.1, dens.n_params)]


def case_three_layer(rng):
    """sconv -> softplus -> sconv -> tanh -> linear -> sigmoid -> bce."""
    coords = _coords(rng, 16)
    n = len(coords)
    target = rng.integers(0, 2, n)

    def fn(x, w1, w2, w3):
        h = sps.elementwise("softplus", sps.sconv(SparseTensor(coords, x), w1))
        h = sps.elementwise("tanh", sps.sconv(h, w2))
        logit = ops.reshape(sps.linear(h, w3).feats, (-1,))
        return ops.bce_bits(ops.sigmoid(logit), target)

    return fn, [rng.standard_normal((n, 2)), rng.standard_normal((27, 2, 3)) * 0.3, rng.standard_normal((27, 3, 3)) * 0.3, rng.standard_normal((3, 1))]


CASES = [
    case_add,
    case_sub,
    case_mul,
    case_neg,
    case_exp,
    case_log,
    case_matmul,
    case_sigmoid,
    case_softplus,
    case_tanh,
    case_relu,
    case_sum_axis,
    case_mean,
    case_concat,
    case_reshape_slice,
    case_clamp_min,
    case_clip,
    case_bce_bits,
    case_bce_logit_bits,
    case_sconv,
    case_sparse_linear,
    case_sparse_concat_add,
    case_scale_rows,
    case_density,
    case_three_layer,
]
SEEDS_PER_CASE = 5  # 25 ops x 5 = 125 randomised instances
