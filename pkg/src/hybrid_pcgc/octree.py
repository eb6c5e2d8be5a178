"""Multiscale voxel hierarchy and the eight-stage child decomposition.

Every per-node array in this package (stage bits, features, probabilities)
indexes nodes in the canonical lexicographic ``(x, y, z)`` order of the
coordinate set it belongs to. Encoder and decoder rely on that ordering to
stay aligned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.utils import check_array

__all__ = [
    "PointCloud",
    "ScaleHierarchy",
    "CorruptOctreeError",
    "voxel_downsample",
    "build_hierarchy",
    "child_offset",
    "CHILD_OFFSETS",
    "stage_ground_truth",
    "all_stage_bits",
    "lsop_features",
    "reconstruct_scale",
    "coord_keys",
]

# Morton order: stage j-1 = b2 b1 b0 -> (dx, dy, dz) = (b2, b1, b0)
CHILD_OFFSETS = np.array(
    [[(j >> 2) & 1, (j >> 1) & 1, j & 1] for j in range(8)], dtype=np.int64
)

DEFAULT_COARSE_THRESHOLD = 64


class CorruptOctreeError(ValueError):
    """Decoded stage bits describe an impossible octree."""


def coord_keys(coords: np.ndarray, bitdepth: int, pad: int = 0) -> np.ndarray:
    """Scalar keys whose ascending order equals lexicographic coordinate order.

    ``pad`` shifts every component so that neighbours at offset ``-pad`` stay
    non-negative; the radix grows accordingly.
    """
    radix = (1 << bitdepth) + 2 * pad
    c = coords.astype(np.int64) + pad
    return (c[:, 0] * radix + c[:, 1]) * radix + c[:, 2]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Occupied voxels of a cloud quantised to ``bitdepth`` bits per axis.

    Coordinates are deduplicated and sorted on construction.
    """

    coords: np.ndarray
    bitdepth: int

    def __post_init__(self):
        if self.bitdepth < 0 or self.bitdepth > 20:
            raise ValueError(f"bitdepth must lie in [0, 20], got {self.bitdepth}")
        coords = check_array(
            np.asarray(self.coords).reshape(-1, 3) if np.size(self.coords) else np.zeros((0, 3)),
            dtype=None,
            ensure_min_samples=1,
        )
        if coords.dtype.kind == "f":
            if not np.all(np.isfinite(coords)) or np.any(coords != np.round(coords)):
                raise ValueError("point coordinates must be integer valued")
        coords = coords.astype(np.int64)
        if coords.min() < 0 or coords.max() >= (1 << self.bitdepth):
            raise ValueError(
                f"coordinates outside [0, 2^{self.bitdepth}) for bitdepth {self.bitdepth}"
            )
        coords = np.unique(coords, axis=0)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.bitdepth == other.bitdepth and np.array_equal(self.coords, other.coords)

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)}, bitdepth={self.bitdepth})"

    @property
    def keys(self) -> np.ndarray:
        return coord_keys(self.coords, self.bitdepth)

    @classmethod
    def _trusted(cls, coords: np.ndarray, bitdepth: int) -> "PointCloud":
        # Skips validation; callers guarantee sorted, unique, in-range coords.
        pc = object.__new__(cls)
        coords = np.ascontiguousarray(coords, dtype=np.int64)
        coords.setflags(write=False)
        object.__setattr__(pc, "coords", coords)
        object.__setattr__(pc, "bitdepth", bitdepth)
        return pc


def _sorted_unique(coords: np.ndarray, bitdepth: int) -> np.ndarray:
    keys = coord_keys(coords, bitdepth)
    _, first = np.unique(keys, return_index=True)
    return coords[first]


def voxel_downsample(pc: PointCloud) -> PointCloud:
    """Max-pool the occupancy grid with a 2x2x2 kernel."""
    if pc.bitdepth == 0:
        raise ValueError("cannot downsample a bitdepth-0 cloud")
    parents = _sorted_unique(pc.coords >> 1, pc.bitdepth - 1)
    return PointCloud._trusted(parents, pc.bitdepth - 1)


@dataclass(frozen=True)
class ScaleHierarchy:
    """Scales ``[x^0, ..., x^L]`` with ``x^0`` the input cloud."""

    scales: list = field(default_factory=list)

    @property
    def L(self) -> int:
        return len(self.scales) - 1

    def __len__(self) -> int:
        return len(self.scales)

    def __getitem__(self, i: int) -> PointCloud:
        return self.scales[i]

    @property
    def n_points(self) -> int:
        return len(self.scales[0])

    def n_candidates(self) -> int:
        """Child slots coded across all scales (eight per parent)."""
        return 8 * sum(len(s) for s in self.scales[1:])


def build_hierarchy(pc: PointCloud, coarse_threshold: int = DEFAULT_COARSE_THRESHOLD) -> ScaleHierarchy:
    if coarse_threshold < 1:
        raise ValueError("coarse_threshold must be >= 1")
    if len(pc) == 0:
        raise ValueError("cannot build a hierarchy over an empty cloud")
    scales = [pc]
    while len(scales[-1]) > coarse_threshold and scales[-1].bitdepth > 0:
        scales.append(voxel_downsample(scales[-1]))
    return ScaleHierarchy(scales)


def child_offset(j: int) -> tuple[int, int, int]:
    """Child offset coded in stage ``j`` (1-based)."""
    if not 1 <= j <= 8:
        raise ValueError(f"stage index must be in 1..8, got {j}")
    return tuple(int(v) for v in CHILD_OFFSETS[j - 1])


def _membership(query: np.ndarray, sorted_keys: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(sorted_keys, query)
    idx = np.minimum(idx, len(sorted_keys) - 1)
    return sorted_keys[idx] == query


def _check_parent_child(children: PointCloud, parents: PointCloud) -> None:
    if parents.bitdepth != children.bitdepth - 1:
        raise ValueError("parents must be exactly one scale coarser than children")
    expected = voxel_downsample(children)
    if expected != parents:
        raise ValueError("parents do not match the downsampled children")


def stage_ground_truth(children: PointCloud, parents: PointCloud, j: int, check: bool = True) -> np.ndarray:
    """Occupancy of the ``j``-th child of every parent, as a uint8 vector."""
    if check:
        _check_parent_child(children, parents)
    off = CHILD_OFFSETS[j - 1] if 1 <= j <= 8 else child_offset(j)
    cand = 2 * parents.coords + off
    return _membership(coord_keys(cand, children.bitdepth), children.keys).astype(np.uint8)


def all_stage_bits(children: PointCloud, parents: PointCloud, check: bool = True) -> np.ndarray:
    """``(8, len(parents))`` array of stage bits for stages 1..8."""
    if check:
        _check_parent_child(children, parents)
    return np.stack([stage_ground_truth(children, parents, j, check=False) for j in range(1, 9)])


def lsop_features(pc: PointCloud) -> np.ndarray:
    """Occupancy of the 2x2x2 sibling block around each node, ``(N, 8)``.

    Channel ``k`` holds the occupancy of ``2*floor(p/2) + child_offset(k+1)``.
    """
    base = (pc.coords >> 1) << 1
    keys = pc.keys
    feats = np.empty((len(pc), 8), dtype=np.float64)
    for k in range(8):
        feats[:, k] = _membership(coord_keys(base + CHILD_OFFSETS[k], pc.bitdepth), keys)
    return feats


def reconstruct_scale(parents: PointCloud, bits) -> PointCloud:
    """Children implied by eight aligned stage-bit vectors over ``parents``."""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape != (8, len(parents)):
        raise ValueError(f"expected stage bits of shape (8, {len(parents)}), got {bits.shape}")
    if np.any(bits.max(axis=0) == 0):
        bad = int(np.flatnonzero(bits.max(axis=0) == 0)[0])
        raise CorruptOctreeError(f"parent {bad} has no occupied child")
    pidx, stage = np.nonzero(bits.T)
    children = 2 * parents.coords[pidx] + CHILD_OFFSETS[stage]
    order = np.argsort(coord_keys(children, parents.bitdepth + 1), kind="stable")
    return PointCloud._trusted(children[order], parents.bitdepth + 1)
