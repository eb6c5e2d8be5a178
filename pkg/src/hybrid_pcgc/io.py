"""PLY input/output for voxelised clouds (parsing delegated to ``plyfile``)."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from .octree import PointCloud

__all__ = ["PlyFormatError", "read_ply", "write_ply", "infer_bitdepth"]


class PlyFormatError(ValueError):
    """The file is not a usable voxel PLY."""


def infer_bitdepth(coords: np.ndarray) -> int:
    top = int(np.max(coords)) if len(coords) else 0
    return max(1, top.bit_length())


def read_ply(path, bitdepth: int | None = None) -> PointCloud:
    """Read integer-valued ``x, y, z`` vertices (ASCII or binary little-endian).

    Duplicates collapse; non-integer or negative coordinates are rejected.
    ``bitdepth`` defaults to the smallest depth that holds every coordinate.
    """
    try:
        ply = PlyData.read(str(path))
    except (PlyParseError, ValueError, UnicodeDecodeError, EOFError) as e:
        raise PlyFormatError(f"{path}: malformed PLY ({e})") from None
    if "vertex" not in ply:
        raise PlyFormatError(f"{path}: no vertex element")
    v = ply["vertex"].data
    names = v.dtype.names or ()
    if not {"x", "y", "z"} <= set(names):
        raise PlyFormatError(f"{path}: vertex element lacks x, y, z")
    coords = np.stack([np.asarray(v[a], dtype=np.float64) for a in "xyz"], axis=1)
    if len(coords) == 0:
        raise PlyFormatError(f"{path}: no vertices")
    if not np.all(np.isfinite(coords)) or np.any(coords != np.round(coords)):
        raise PlyFormatError(f"{path}: coordinates must be integer valued (voxelise first)")
    if coords.min() < 0:
        raise PlyFormatError(f"{path}: negative coordinates")
    coords = coords.astype(np.int64)
    depth = infer_bitdepth(coords) if bitdepth is None else bitdepth
    try:
        return PointCloud(coords, depth)
    except ValueError as e:
        raise PlyFormatError(f"{path}: {e}") from None


def write_ply(pc: PointCloud, path, binary: bool = True) -> Path:
    """Write the cloud as int32 ``x, y, z`` vertices."""
    vertex = np.empty(len(pc), dtype=[("x", "<i4"), ("y", "<i4"), ("z", "<i4")])
    for k, a in enumerate("xyz"):
        vertex[a] = pc.coords[:, k]
    path = Path(path)
    PlyData([PlyElement.describe(vertex, "vertex")], text=not binary, byte_order="<").write(str(path))
    return path
