"""Hybrid lossless point-cloud geometry codec.

A frozen, pretrained prior network (PPN) supplies occupancy priors; a small
refiner network (DAR) is coded as a pretrained base layer plus a per-GoPC
overfitted enhancement layer whose parameters are entropy coded (SMC).
"""

from .assets import AssetFormatError, ModelAssets
from .coding.arith import CorruptStreamError
from .coding.bitstream import AssetMismatchError
from .dar import DarConfig
from .estimators import HybridCodec, PriorNetwork, RefinerBase
from .io import PlyFormatError, read_ply, write_ply
from .metrics import TimeBppCurve, bpp, tb_rate
from .octree import CorruptOctreeError, PointCloud, build_hierarchy
from .partition import kdtree_partition
from .pipeline import (
    DecodeResult,
    EncodeResult,
    Enhancement,
    RateReport,
    TrainConfig,
    decode_gopc,
    encode_gopc,
    frequency_baseline_bits,
    overfit_enhancement,
    pretrain_ppn,
    train_base,
)
from .ppn import PpnConfig

__version__ = "0.1.0"

__all__ = [
    "AssetFormatError",
    "AssetMismatchError",
    "CorruptOctreeError",
    "CorruptStreamError",
    "DarConfig",
    "DecodeResult",
    "EncodeResult",
    "Enhancement",
    "HybridCodec",
    "ModelAssets",
    "PlyFormatError",
    "PointCloud",
    "PpnConfig",
    "PriorNetwork",
    "RateReport",
    "RefinerBase",
    "TimeBppCurve",
    "TrainConfig",
    "bpp",
    "build_hierarchy",
    "decode_gopc",
    "encode_gopc",
    "frequency_baseline_bits",
    "kdtree_partition",
    "overfit_enhancement",
    "pretrain_ppn",
    "read_ply",
    "tb_rate",
    "train_base",
    "write_ply",
]
