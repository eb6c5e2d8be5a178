"""Distribution-agnostic refiner: per-stage occupancy probabilities.

The refiner sees three inputs per stage: sibling-block occupancy of the
parents (fixed for the scale), the bits of all earlier stages, and the
prior logit of the current stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autodiff import CoordSet, SparseTensor, Tensor, ops
from .autodiff import sparse as sps
from .coding.arith import PROB_ONE
from .nn import FemConfig, fem_forward, fem_param_shapes

__all__ = [
    "DarConfig",
    "DarScaleContext",
    "dar_param_shapes",
    "dar_global",
    "dar_stage_features",
    "dar_logit",
    "dar_predict",
    "dar_scale_bits",
    "stage_input",
]

STAGE_CHANNELS = 7


@dataclass(frozen=True)
class DarConfig:
    k: int = 1
    C: int = 16
    hidden: int = 16

    @property
    def global_fem(self) -> FemConfig:
        return FemConfig(self.k, self.C, 8)

    @property
    def stage_fem(self) -> FemConfig:
        return FemConfig(self.k, self.C, STAGE_CHANNELS)


def dar_param_shapes(cfg: DarConfig) -> list:
    return (
        fem_param_shapes("dar.global", cfg.global_fem)
        + fem_param_shapes("dar.stage", cfg.stage_fem)
        + [
            ("dar.head.w", (27, cfg.C + 1, cfg.C)),
            ("dar.head.b", (cfg.C,)),
            ("dar.mlp1.w", (cfg.C, cfg.hidden)),
            ("dar.mlp1.b", (cfg.hidden,)),
            ("dar.mlp2.w", (cfg.hidden, 1)),
            ("dar.mlp2.b", (1,)),
        ]
    )


@dataclass
class DarScaleContext:
    F_G: SparseTensor
    decoded: list


def dar_global(coords: CoordSet, lsop: np.ndarray, params: Mapping[str, Tensor], cfg: DarConfig) -> SparseTensor:
    dtype = params["dar.head.w"].dtype
    t = SparseTensor(coords, Tensor(np.asarray(lsop, dtype=dtype)))
    return fem_forward(t, cfg.global_fem, params, "dar.global")


def stage_input(decoded, n: int, dtype) -> np.ndarray:
    """Earlier stage bits as channels, zero padded to seven."""
    x = np.zeros((n, STAGE_CHANNELS), dtype=dtype)
    for c, bits in enumerate(decoded):
        x[:, c] = bits
    return x


def dar_stage_features(ctx: DarScaleContext, j: int, params: Mapping[str, Tensor], cfg: DarConfig) -> SparseTensor:
    if len(ctx.decoded) != j - 1:
        raise ValueError(f"stage {j} needs {j - 1} decoded stages, have {len(ctx.decoded)}")
    if j == 1:
        return ctx.F_G
    coords = ctx.F_G.coords
    x = stage_input(ctx.decoded, len(coords), ctx.F_G.feats.dtype)
    local = fem_forward(SparseTensor(coords, Tensor(x)), cfg.stage_fem, params, "dar.stage")
    return sps.add(ctx.F_G, local)


def dar_logit(F_I: SparseTensor, prior: SparseTensor, params: Mapping[str, Tensor]) -> Tensor:
    """Occupancy logit per parent, shape ``(N,)``."""
    h = sps.sconv(sps.concat_channels(F_I, prior), params["dar.head.w"], params["dar.head.b"])
    h = sps.elementwise("relu", sps.linear(h, params["dar.mlp1.w"], params["dar.mlp1.b"]))
    logit = sps.linear(h, params["dar.mlp2.w"], params["dar.mlp2.b"])
    return ops.reshape(logit.feats, (-1,))


def dar_predict(F_I: SparseTensor, prior: SparseTensor, params: Mapping[str, Tensor]) -> Tensor:
    """Occupancy probability per parent, shape ``(N,)``, clamped to the range
    the 16-bit coder can represent so its bce equals the coded rate."""
    return ops.clip(ops.sigmoid(dar_logit(F_I, prior, params)), 1 / PROB_ONE, 1 - 1 / PROB_ONE)


def _prior_tensor(coords: CoordSet, logit, dtype) -> SparseTensor:
    if logit is None:
        return SparseTensor(coords, Tensor(np.zeros((len(coords), 1), dtype=dtype)))
    if isinstance(logit, Tensor):
        return SparseTensor(coords, ops.reshape(logit, (-1, 1)))
    return SparseTensor(coords, Tensor(np.asarray(logit, dtype=dtype).reshape(-1, 1)))


def dar_scale_bits(
    coords: CoordSet,
    lsop: np.ndarray,
    stage_bits: np.ndarray,
    priors,
    params: Mapping[str, Tensor],
    cfg: DarConfig,
) -> list:
    """Teacher-forced bce bits of each of the eight stages of one scale.

    ``priors`` holds eight logit vectors, or ``None`` for a constant-zero prior.
    """
    dtype = params["dar.head.w"].dtype
    ctx = DarScaleContext(dar_global(coords, lsop, params, cfg), [])
    out = []
    for j in range(1, 9):
        F_I = dar_stage_features(ctx, j, params, cfg)
        prior = _prior_tensor(coords, None if priors is None else priors[j - 1], dtype)
        out.append(ops.bce_logit_bits(dar_logit(F_I, prior, params), stage_bits[j - 1]))
        ctx.decoded.append(stage_bits[j - 1])
    return out
