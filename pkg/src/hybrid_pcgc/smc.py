"""Compression of the enhancement-layer parameter vector.

Parameters are scaled by a learnable ``e^Fa``, rounded with a straight-through
estimator and entropy coded under a learned factorized density. During
training the rounding is replaced by additive uniform noise to obtain a
differentiable rate estimate.
"""

from __future__ import annotations

import struct

import numpy as np
from scipy.special import expit

from .autodiff import Tensor, grad, ops
from .optim import Adam
from .coding.arith import BinaryDecoder, BinaryEncoder, CorruptStreamError, quantize_probs

__all__ = [
    "QMAX",
    "FactorizedDensity",
    "density_likelihood",
    "ste_quantize",
    "dequantize",
    "rate_proxy",
    "exact_bits",
    "fit_density",
    "encode_params",
    "decode_params",
    "encode_raw_params",
    "decode_raw_params",
]

QMAX = 2**15 - 1
LIKELIHOOD_FLOOR = 1e-9
_U16_SCALE = 256.0  # density parameters travel as signed Q8.8


class FactorizedDensity:
    """Univariate monotone CDF ``c(x) = sigmoid(f(x))`` shared by all parameters.

    ``f`` chains affine maps with softplus-positive weights and tanh gates
    ``h + tanh(a) * tanh(h)``; ``tanh(a) > -1`` keeps every layer increasing.
    """

    def __init__(self, vector=None, filters=(3, 3, 3), init_scale: float = 4.0, seed: int = 0):
        self.filters = tuple(int(f) for f in filters)
        dims = (1,) + self.filters + (1,)
        self.shapes = []
        for i in range(len(dims) - 1):
            self.shapes.append((f"H{i}", (dims[i], dims[i + 1])))
            self.shapes.append((f"b{i}", (dims[i + 1],)))
            if i < len(self.filters):
                self.shapes.append((f"a{i}", (dims[i + 1],)))
        self.n_params = int(sum(np.prod(s) for _, s in self.shapes))
        if vector is None:
            vector = self._init_vector(init_scale, np.random.default_rng(seed))
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.size != self.n_params:
            raise ValueError(f"density expects {self.n_params} parameters, got {vector.size}")
        self.vector = vector

    def _init_vector(self, init_scale: float, rng) -> np.ndarray:
        dims = (1,) + self.filters + (1,)
        scale = init_scale ** (1.0 / (len(self.filters) + 1))
        parts = []
        for name, shape in self.shapes:
            i = int(name[1:])
            if name[0] == "H":
                parts.append(np.full(shape, np.log(np.expm1(1.0 / scale / dims[i + 1]))))
            elif name[0] == "b":
                parts.append(rng.uniform(-0.5, 0.5, shape))
            else:
                parts.append(np.zeros(shape))
        return np.concatenate([p.reshape(-1) for p in parts])

    def split(self, vec):
        """Named parameter pieces of ``vec`` (array or differentiable Tensor)."""
        out, o = {}, 0
        for name, shape in self.shapes:
            n = int(np.prod(shape))
            if isinstance(vec, Tensor):
                out[name] = ops.reshape(ops.slice1d(vec, o, o + n), shape)
            else:
                out[name] = np.asarray(vec)[o : o + n].reshape(shape)
            o += n
        return out

    def to_u16(self) -> np.ndarray:
        return np.clip(np.rint(self.vector * _U16_SCALE) + 32768, 0, 65535).astype(np.uint16)

    @classmethod
    def from_u16(cls, words, filters=(3, 3, 3)) -> "FactorizedDensity":
        vec = (np.asarray(words, dtype=np.float64) - 32768) / _U16_SCALE
        return cls(vec, filters=filters)

    def quantized(self) -> "FactorizedDensity":
        """The density exactly as a decoder reconstructs it from the header."""
        return FactorizedDensity.from_u16(self.to_u16(), self.filters)

    def logits(self, x: np.ndarray) -> np.ndarray:
        p = self.split(self.vector)
        h = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        n_layers = len(self.filters) + 1
        for i in range(n_layers):
            h = h @ _np_softplus(p[f"H{i}"]) + p[f"b{i}"]
            if i < n_layers - 1:
                h = h + np.tanh(p[f"a{i}"]) * np.tanh(h)
        return h.reshape(-1)

    def cdf(self, x) -> np.ndarray:
        return expit(self.logits(x))

    def bin_mass(self, q) -> np.ndarray:
        """Mass of ``[q - 0.5, q + 0.5]`` evaluated away from the saturated tail."""
        q = np.asarray(q, dtype=np.float64)
        lo, hi = self.logits(q - 0.5), self.logits(q + 0.5)
        s = np.where(lo + hi > 0, -1.0, 1.0)
        return np.abs(expit(s * hi) - expit(s * lo))

    def pmf(self, qmax: int = QMAX) -> np.ndarray:
        """Renormalised probabilities of the integers ``-qmax..qmax``."""
        mass = np.maximum(self.bin_mass(np.arange(-qmax, qmax + 1)), 0.0)
        total = mass.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("density has no mass on the symbol range")
        return mass / total


def _np_softplus(x):
    return np.where(x > 30, x, np.log1p(np.exp(np.minimum(x, 30))))


def density_likelihood(x: Tensor, dparams: dict, n_filters: int = 3) -> Tensor:
    """Differentiable bin mass ``c(x + 0.5) - c(x - 0.5)`` for ``(n,)`` inputs."""

    def f(z):
        h = ops.reshape(z, (-1, 1))
        for i in range(n_filters + 1):
            h = ops.add(ops.matmul(h, ops.softplus(dparams[f"H{i}"])), dparams[f"b{i}"])
            if i < n_filters:
                h = ops.add(h, ops.mul(ops.tanh(dparams[f"a{i}"]), ops.tanh(h)))
        return ops.reshape(h, (-1,))

    lo, hi = f(ops.sub(x, 0.5)), f(ops.add(x, 0.5))
    s = np.where(lo.data + hi.data > 0, -1.0, 1.0)
    mass = ops.mul(ops.sub(ops.sigmoid(ops.mul(hi, s)), ops.sigmoid(ops.mul(lo, s))), s)
    return ops.clamp_min(mass, LIKELIHOOD_FLOOR)


def ste_quantize(v, fa, qmax: int = QMAX) -> Tensor:
    """``round(e^Fa * v)`` clipped to ``[-qmax, qmax]`` with straight-through gradients."""
    return ops.ste_round(ops.mul(ops.exp(fa), v), bound=qmax)


def dequantize(Q, fa):
    """``Q / e^Fa``; plain arrays in give arrays out."""
    if isinstance(Q, Tensor) or isinstance(fa, Tensor):
        return ops.mul(Q, ops.exp(ops.neg(fa)))
    return np.asarray(Q, dtype=np.float64) / np.exp(np.float64(fa))


def rate_proxy(v, fa, dvec: Tensor, density: FactorizedDensity, rng: np.random.Generator | None = None, noise=None) -> Tensor:
    """Differentiable bit estimate of the quantised parameter vector."""
    scaled = ops.mul(ops.exp(fa), v)
    if noise is None:
        noise = rng.uniform(-0.5, 0.5, size=scaled.shape)
    lik = density_likelihood(ops.add(scaled, noise), density.split(dvec), len(density.filters))
    return ops.mul(ops.sum(ops.log(lik)), -1.0 / np.log(2.0))


def exact_bits(Q, density: FactorizedDensity, qmax: int = QMAX) -> float:
    """Ideal code length of integer symbols under the renormalised pmf."""
    pmf = density.pmf(qmax)
    idx = np.asarray(Q, dtype=np.int64) + qmax
    return float(-np.log2(np.maximum(pmf[idx], 1e-300)).sum())


def fit_density(Q, init: FactorizedDensity | None = None, steps: int = 300, lr: float = 0.05, qmax: int = QMAX) -> FactorizedDensity:
    """Encoder-side refit of the density to the actual symbol histogram.

    Minimises the exact code length of ``Q``; the result is snapped to the
    header's 16-bit grid and only replaces ``init`` when it codes cheaper.
    """
    values, counts = np.unique(np.asarray(Q, dtype=np.int64), return_counts=True)
    if init is None:
        init = FactorizedDensity(init_scale=max(1.0, float(np.sqrt(np.mean(np.asarray(Q, dtype=np.float64) ** 2)))))
    init = init.quantized()
    dvec = Tensor(init.vector.copy(), requires_grad=True)
    x = Tensor(values.astype(np.float64))
    w = counts.astype(np.float64)
    opt = Adam(1, beta1=0.9)
    for _ in range(steps):
        lik = density_likelihood(x, init.split(dvec), len(init.filters))
        bits = ops.mul(ops.sum(ops.mul(ops.log(lik), w)), -1.0 / np.log(2.0))
        (g,) = grad(bits, [dvec])
        opt.step([dvec.data], [g], lr)
        np.clip(dvec.data, -127.0, 127.0, out=dvec.data)
    fitted = FactorizedDensity(dvec.data, init.filters).quantized()
    try:
        better = exact_bits(Q, fitted, qmax) < exact_bits(Q, init, qmax)
    except ValueError:
        better = False
    return fitted if better else init


def _tree_probs(pmf: np.ndarray) -> tuple:
    """16-bit P(right) for every internal node of a balanced binary symbol tree."""
    depth = max(1, int(np.ceil(np.log2(len(pmf)))))
    level = np.zeros(1 << depth)
    level[: len(pmf)] = pmf
    p16 = np.zeros(1 << depth, dtype=np.int64)
    for d in range(depth - 1, -1, -1):
        left, right = level[0::2], level[1::2]
        mass = left + right
        with np.errstate(invalid="ignore", divide="ignore"):
            p_right = np.where(mass > 0, right / np.where(mass > 0, mass, 1.0), 0.5)
        p16[1 << d : 2 << d] = quantize_probs(p_right)
        level = mass
    return depth, p16


def encode_params(Q, density: FactorizedDensity, fa: float, qmax: int = QMAX) -> bytes:
    """Parameter sub-stream: count, Fa, density words, arithmetic payload.

    ``density`` should already be :meth:`FactorizedDensity.quantized`; the
    stream carries its 16-bit words and the decoder rebuilds the pmf from them.
    """
    Q = np.asarray(Q, dtype=np.int64).reshape(-1)
    if np.any(np.abs(Q) > qmax):
        raise ValueError("symbols exceed the clamp range")
    words = density.to_u16()
    depth, p16 = _tree_probs(FactorizedDensity.from_u16(words, density.filters).pmf(qmax))
    s = Q + qmax
    levels = np.arange(depth)
    nodes = ((s[:, None] + (1 << depth)) >> (depth - levels[None, :]))
    bits = (s[:, None] >> (depth - 1 - levels[None, :])) & 1
    enc = BinaryEncoder()
    enc.encode_many(bits.reshape(-1).tolist(), p16[nodes.reshape(-1)].tolist())
    payload = enc.finish()
    head = struct.pack("<If", len(Q), np.float32(fa))
    head += struct.pack("<B", len(words)) + words.astype("<u2").tobytes()
    return head + struct.pack("<I", len(payload)) + payload


def decode_params(data: bytes, filters=(3, 3, 3), qmax: int = QMAX) -> tuple:
    """Returns ``(Q, fa, density, n_bytes_consumed)``."""
    try:
        count, fa = struct.unpack_from("<If", data, 0)
        (n_words,) = struct.unpack_from("<B", data, 8)
        o = 9
        words = np.frombuffer(data, dtype="<u2", count=n_words, offset=o)
        o += 2 * n_words
        (n_payload,) = struct.unpack_from("<I", data, o)
        o += 4
    except (struct.error, ValueError) as e:
        raise CorruptStreamError(f"parameter header truncated: {e}") from None
    if o + n_payload > len(data):
        raise CorruptStreamError("parameter payload truncated")
    density = FactorizedDensity.from_u16(words, filters)
    depth, p16 = _tree_probs(density.pmf(qmax))
    table = p16.tolist()
    dec = BinaryDecoder(data[o : o + n_payload])
    decode = dec.decode
    out = np.empty(count, dtype=np.int64)
    top = 1 << depth
    limit = 2 * qmax + 1
    for i in range(count):
        node = 1
        while node < top:
            node = 2 * node + decode(table[node])
        sym = node - top
        if sym >= limit:
            raise CorruptStreamError(f"invalid parameter symbol at index {i}")
        out[i] = sym - qmax
    dec.check_end()
    return out, float(np.float32(fa)), density, o + n_payload


def encode_raw_params(v) -> bytes:
    v = np.asarray(v, dtype="<f4").reshape(-1)
    return struct.pack("<I", v.size) + v.tobytes()


def decode_raw_params(data: bytes) -> tuple:
    """Returns ``(vector_float32, n_bytes_consumed)``."""
    try:
        (count,) = struct.unpack_from("<I", data, 0)
    except struct.error:
        raise CorruptStreamError("raw parameter header truncated") from None
    if 4 + 4 * count > len(data):
        raise CorruptStreamError("raw parameter payload truncated")
    return np.frombuffer(data, dtype="<f4", count=count, offset=4).copy(), 4 + 4 * count
