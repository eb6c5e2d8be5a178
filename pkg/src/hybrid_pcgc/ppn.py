"""Pretrained prior network: eight-stage prior logits with feature-masking feedback."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import CoordSet, SparseTensor, Tensor, ops
from .autodiff import sparse as sps
from .nn import FemConfig, fem_forward, fem_param_shapes
from .octree import ScaleHierarchy, all_stage_bits

__all__ = [
    "PpnConfig",
    "PpnState",
    "ppn_param_shapes",
    "ppn_open_scale",
    "ppn_mask_update",
    "ppn_prior",
    "ppn_stage_priors",
    "ppn_pretrain_loss",
]


@dataclass(frozen=True)
class PpnConfig:
    k: int = 3
    C: int = 32

    @property
    def open_fem(self) -> FemConfig:
        return FemConfig(self.k, self.C, 1)

    @property
    def stage_fem(self) -> FemConfig:
        return FemConfig(self.k, self.C, self.C)


def ppn_param_shapes(cfg: PpnConfig) -> list:
    return (
        fem_param_shapes("ppn.open", cfg.open_fem)
        + fem_param_shapes("ppn.stage", cfg.stage_fem)
        + [("ppn.head.w", (27, cfg.C, 1)), ("ppn.head.b", (1,))]
    )


@dataclass(frozen=True)
class PpnState:
    I: SparseTensor
    T: SparseTensor


def ppn_open_scale(coords: CoordSet, params: Mapping[str, Tensor], cfg: PpnConfig) -> PpnState:
    dtype = params["ppn.head.w"].dtype
    ones = SparseTensor(coords, Tensor(np.ones((len(coords), 1), dtype=dtype)))
    I = fem_forward(ones, cfg.open_fem, params, "ppn.open")
    return PpnState(I, fem_forward(I, cfg.stage_fem, params, "ppn.stage"))


def ppn_mask_update(state: PpnState, bits, params: Mapping[str, Tensor], cfg: PpnConfig) -> PpnState:
    """Push the running feature up for occupied children and down otherwise."""
    bits = np.asarray(bits)
    if bits.shape != (len(state.I.coords),):
        raise ValueError(f"expected {len(state.I.coords)} stage bits, got shape {bits.shape}")
    sign = 2.0 * bits.astype(state.T.feats.dtype) - 1.0
    I = sps.add(state.I, sps.scale_rows(sps.elementwise("softplus", state.T), sign))
    return PpnState(I, fem_forward(I, cfg.stage_fem, params, "ppn.stage"))


def ppn_prior(state: PpnState, params: Mapping[str, Tensor]) -> SparseTensor:
    """One-channel prior logit per parent."""
    return sps.sconv(state.T, params["ppn.head.w"], params["ppn.head.b"])


def ppn_stage_priors(coords: CoordSet, stage_bits, params, cfg: PpnConfig) -> list:
    """Teacher-forced logits for stages 1..8 as ``(N,)`` tensors.

    Feedback uses the given ground-truth bits, which is exactly what a decoder
    sees once each stage is decoded.
    """
    stage_bits = np.asarray(stage_bits)
    state = ppn_open_scale(coords, params, cfg)
    priors = []
    for j in range(8):
        priors.append(ops.reshape(ppn_prior(state, params).feats, (-1,)))
        if j < 7:
            state = ppn_mask_update(state, stage_bits[j], params, cfg)
    return priors


def ppn_pretrain_loss(hierarchy: ScaleHierarchy, params, cfg: PpnConfig, cache: dict | None = None) -> Tensor:
    """Bits per point of the PPN used on its own as an occupancy predictor."""
    total = None
    for i in range(hierarchy.L):
        children, parents = hierarchy[i], hierarchy[i + 1]
        if cache is not None and i in cache:
            coords, bits = cache[i]
        else:
            coords, bits = CoordSet.from_cloud(parents), all_stage_bits(children, parents, check=False)
            if cache is not None:
                cache[i] = (coords, bits)
        for j, logit in enumerate(ppn_stage_priors(coords, bits, params, cfg)):
            b = ops.bce_logit_bits(logit, bits[j])
            total = b if total is None else ops.add(total, b)
    if total is None:
        return Tensor(np.zeros((), dtype=params["ppn.head.w"].dtype))
    return ops.mul(total, 1.0 / hierarchy.n_points)
