"""Feature-extraction blocks and the base + enhancement parameter store."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import SparseTensor, Tensor, ops
from .autodiff import sparse as sps

__all__ = [
    "FemConfig",
    "fem_param_shapes",
    "fem_forward",
    "ParamStore",
    "init_params",
    "as_param_tensors",
]


@dataclass(frozen=True)
class FemConfig:
    """FEM(k, C): input sparse conv to ``C`` channels followed by ``k`` IRN blocks."""

    k: int
    C: int
    C_in: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("FEM needs at least one IRN block")
        if self.C < 4 or self.C % 4:
            raise ValueError("FEM hidden channels must be a positive multiple of 4")
        if self.C_in < 1:
            raise ValueError("FEM needs at least one input channel")


def _conv_shapes(name: str, cin: int, cout: int) -> list:
    return [(f"{name}.w", (27, cin, cout)), (f"{name}.b", (cout,))]


def fem_param_shapes(prefix: str, cfg: FemConfig) -> list:
    C, h, q = cfg.C, cfg.C // 2, cfg.C // 4
    shapes = _conv_shapes(f"{prefix}.in", cfg.C_in, C)
    for blk in range(cfg.k):
        p = f"{prefix}.irn{blk}"
        shapes += _conv_shapes(f"{p}.a1", C, h)
        shapes += _conv_shapes(f"{p}.a2", h, h)
        shapes += _conv_shapes(f"{p}.b1", C, q)
        shapes += _conv_shapes(f"{p}.b2", q, q)
        shapes += _conv_shapes(f"{p}.b3", q, h)
    return shapes


def _conv(t: SparseTensor, params: Mapping[str, Tensor], name: str) -> SparseTensor:
    return sps.sconv(t, params[f"{name}.w"], params[f"{name}.b"])


def _irn(x: SparseTensor, params, p: str) -> SparseTensor:
    a = _conv(sps.elementwise("relu", _conv(x, params, f"{p}.a1")), params, f"{p}.a2")
    b = sps.elementwise("relu", _conv(x, params, f"{p}.b1"))
    b = _conv(sps.elementwise("relu", _conv(b, params, f"{p}.b2")), params, f"{p}.b3")
    return sps.add(x, sps.concat_channels(a, b))


def fem_forward(t: SparseTensor, cfg: FemConfig, params: Mapping[str, Tensor], prefix: str) -> SparseTensor:
    if t.C != cfg.C_in:
        raise ValueError(f"FEM {prefix!r} expects {cfg.C_in} channels, got {t.C}")
    x = _conv(t, params, f"{prefix}.in")
    for blk in range(cfg.k):
        x = _irn(x, params, f"{prefix}.irn{blk}")
    return x


def init_params(shapes, rng: np.random.Generator, dtype=np.float64) -> dict:
    """He-style initialisation for kernels and dense weights, zero biases."""
    out = {}
    for name, shape in shapes:
        if name.endswith(".b"):
            out[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[:-1]))
        out[name] = (rng.standard_normal(shape) * np.sqrt(1.0 / fan_in)).astype(dtype)
    return out


def as_param_tensors(arrays: Mapping[str, np.ndarray], requires_grad: bool = False, dtype=None) -> dict:
    return {
        k: Tensor(v if dtype is None else np.asarray(v, dtype=dtype), requires_grad=requires_grad, name=k)
        for k, v in arrays.items()
    }


class ParamStore:
    """Named tensors split into a frozen base and a trainable enhancement.

    ``effective(name) = base(name) + enhancement(name)``. Declaration order of
    ``shapes`` fixes the serialisation order.
    """

    def __init__(self, shapes, base: Mapping[str, np.ndarray] | None = None, dtype=np.float64):
        self.shapes = [(str(n), tuple(int(d) for d in s)) for n, s in shapes]
        names = [n for n, _ in self.shapes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names")
        self.dtype = np.dtype(dtype)
        sizes = [int(np.prod(s)) for _, s in self.shapes]
        self.offsets = dict(zip(names, np.cumsum([0] + sizes[:-1]).tolist()))
        self.sizes = dict(zip(names, sizes))
        if base is None:
            base = {n: np.zeros(s, dtype=self.dtype) for n, s in self.shapes}
        self.base = {}
        for n, s in self.shapes:
            arr = np.asarray(base[n], dtype=self.dtype)
            if arr.shape != s:
                raise ValueError(f"base tensor {n!r} has shape {arr.shape}, expected {s}")
            self.base[n] = arr
        self.enhancement = {n: np.zeros(s, dtype=self.dtype) for n, s in self.shapes}

    @property
    def names(self) -> list:
        return [n for n, _ in self.shapes]

    @property
    def param_count(self) -> int:
        return int(sum(self.sizes.values()))

    def effective(self, name: str) -> np.ndarray:
        return self.base[name] + self.enhancement[name]

    def effective_all(self) -> dict:
        return {n: self.effective(n) for n in self.names}

    def serialize(self, tensors: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
        tensors = self.enhancement if tensors is None else tensors
        return np.concatenate([np.asarray(tensors[n], dtype=self.dtype).reshape(-1) for n in self.names])

    def structure(self, vec) -> dict:
        vec = np.asarray(vec)
        if vec.ndim != 1 or vec.shape[0] != self.param_count:
            raise ValueError(f"expected a vector of length {self.param_count}, got shape {vec.shape}")
        return {
            n: vec[self.offsets[n] : self.offsets[n] + self.sizes[n]].reshape(s) for n, s in self.shapes
        }

    def structure_tensor(self, vec: Tensor, base: Mapping[str, Tensor] | None = None) -> dict:
        """Differentiable :meth:`structure`, optionally adding the base tensors."""
        out = {}
        for n, s in self.shapes:
            o = self.offsets[n]
            piece = ops.reshape(ops.slice1d(vec, o, o + self.sizes[n]), s)
            out[n] = piece if base is None else ops.add(base[n], piece)
        return out

    def set_enhancement(self, vec) -> None:
        self.enhancement = {n: np.array(v, dtype=self.dtype) for n, v in self.structure(vec).items()}
