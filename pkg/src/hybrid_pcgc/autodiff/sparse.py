"""Sparse voxel tensors and submanifold 3x3x3 convolution.

All features live on a fixed coordinate set; convolution output is defined on
the same set as its input and absent neighbours contribute nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ops
from .tensor import Tensor, accumulate, as_tensor, make_result

__all__ = [
    "KERNEL_OFFSETS",
    "CENTER_TAP",
    "CoordSet",
    "SparseTensor",
    "sconv",
    "elementwise",
    "linear",
    "concat_channels",
    "add",
    "scale_rows",
    "CoordinateMismatch",
]

KERNEL_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)], dtype=np.int64
)
CENTER_TAP = 13


class CoordinateMismatch(ValueError):
    pass


class CoordSet:
    """Canonically ordered coordinates plus a cached neighbour operator.

    The neighbour operator is a CSR matrix ``M`` of shape ``(N, 27 N)`` with
    ``M[c, 27 n + k] = 1`` when node ``n`` sits at kernel offset ``k`` from
    node ``c``. Building it costs one sorted-key lookup per offset.
    """

    def __init__(self, coords: np.ndarray, bitdepth: int):
        self.coords = np.asarray(coords, dtype=np.int64)
        self.bitdepth = bitdepth
        self._ops: dict = {}

    def __len__(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def from_cloud(cls, pc) -> "CoordSet":
        return cls(pc.coords, pc.bitdepth)

    def neighbor_table(self) -> np.ndarray:
        """``(N, 27)`` neighbour indices, ``-1`` where the voxel is empty."""
        if "table" not in self._ops:
            radix = (1 << self.bitdepth) + 2
            c = self.coords + 1
            keys = (c[:, 0] * radix + c[:, 1]) * radix + c[:, 2]
            table = np.full((len(self), 27), -1, dtype=np.int64)
            if len(self):
                for k, (dx, dy, dz) in enumerate(KERNEL_OFFSETS):
                    q = keys + (dx * radix + dy) * radix + dz
                    idx = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
                    hit = keys[idx] == q
                    table[hit, k] = idx[hit]
            self._ops["table"] = table
        return self._ops["table"]

    def operators(self, dtype) -> tuple:
        dtype = np.dtype(dtype)
        if dtype not in self._ops:
            table = self.neighbor_table()
            rows, ks = np.nonzero(table >= 0)
            cols = table[rows, ks] * 27 + ks
            n = len(self)
            m = sp.csr_matrix(
                (np.ones(len(rows), dtype=dtype), (rows, cols)), shape=(n, 27 * n)
            )
            m.sort_indices()
            self._ops[dtype] = (m, m.T.tocsr())
        return self._ops[dtype]


@dataclass(frozen=True)
class SparseTensor:
    coords: CoordSet
    feats: Tensor

    def __post_init__(self):
        if self.feats.ndim != 2 or self.feats.shape[0] != len(self.coords):
            raise ValueError(
                f"features of shape {self.feats.shape} do not match {len(self.coords)} coordinates"
            )

    @property
    def C(self) -> int:
        return self.feats.shape[1]

    @property
    def data(self) -> np.ndarray:
        return self.feats.data

    def with_feats(self, feats: Tensor) -> "SparseTensor":
        return SparseTensor(self.coords, feats)


def _same_coords(a: SparseTensor, b: SparseTensor) -> None:
    if a.coords is b.coords:
        return
    if len(a.coords) != len(b.coords) or not np.array_equal(a.coords.coords, b.coords.coords):
        raise CoordinateMismatch("operands live on different coordinate sets")


def _sconv_raw(x: Tensor, w: Tensor, b: Tensor | None, coords: CoordSet) -> Tensor:
    n, cin = x.shape
    if w.shape[:2] != (27, cin):
        raise ValueError(f"kernel of shape {w.shape} does not accept {cin} input channels")
    cout = w.shape[2]
    m, mt = coords.operators(x.dtype)
    w_stack = w.data.transpose(1, 0, 2).reshape(cin, 27 * cout)
    z = (x.data @ w_stack).reshape(27 * n, cout)
    y = np.asarray(m @ z)
    if b is not None:
        y = y + b.data

    def back(g):
        if b is not None:
            accumulate(b, g.sum(axis=0))
        if not (x.requires_grad or w.requires_grad):
            return
        gz = np.asarray(mt @ g).reshape(n, 27 * cout)
        if x.requires_grad:
            accumulate(x, gz @ w_stack.T)
        if w.requires_grad:
            gw = (x.data.T @ gz).reshape(cin, 27, cout).transpose(1, 0, 2)
            accumulate(w, gw)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(y.astype(x.dtype, copy=False), parents, back)


def sconv(t: SparseTensor, w, b=None) -> SparseTensor:
    """``out(c) = sum_k W_k f(c + k) + b`` over occupied neighbours ``c + k``."""
    w = as_tensor(w)
    b = None if b is None else as_tensor(b)
    return t.with_feats(_sconv_raw(t.feats, w, b, t.coords))


def elementwise(op: str, t: SparseTensor) -> SparseTensor:
    return t.with_feats(ops.elementwise(op, t.feats))


def linear(t: SparseTensor, w, b=None) -> SparseTensor:
    out = ops.matmul(t.feats, w)
    if b is not None:
        out = ops.add(out, b)
    return t.with_feats(out)


def concat_channels(a: SparseTensor, b: SparseTensor) -> SparseTensor:
    _same_coords(a, b)
    return a.with_feats(ops.concat([a.feats, b.feats], axis=1))


def add(a: SparseTensor, b: SparseTensor) -> SparseTensor:
    _same_coords(a, b)
    return a.with_feats(ops.add(a.feats, b.feats))


def scale_rows(t: SparseTensor, s) -> SparseTensor:
    s = as_tensor(s)
    if s.shape[0] != len(t.coords):
        raise ValueError("row scale length does not match the coordinate count")
    if not s.requires_grad and s.dtype != t.feats.dtype:
        s = Tensor(s.data.astype(t.feats.dtype))
    return t.with_feats(ops.mul(t.feats, ops.reshape(s, (-1, 1))))
