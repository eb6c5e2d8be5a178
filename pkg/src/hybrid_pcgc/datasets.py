"""Synthetic voxel clouds for pretraining, tests and benchmarks.

* toy family: clean shell surfaces of simple primitives (sphere, box,
  cylinder, torus, plane) under random pose, voxelised at bitdepth 6-8;
* OOD family: the same primitives with Gaussian jitter and random point
  dropout, whose local statistics differ from the toy family;
* GoPC sequences: a scene moving smoothly over ``T`` frames.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .octree import PointCloud

__all__ = [
    "PRIMITIVES",
    "sample_surface",
    "voxelize",
    "toy_cloud",
    "ood_cloud",
    "random_cloud",
    "toy_dataset",
    "gopc_sequence",
    "augment_cloud",
]

PRIMITIVES = ("sphere", "box", "cylinder", "torus", "plane")


def sample_surface(shape: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points on the unit-scale surface of ``shape`` (inside ``[-1, 1]^3``)."""
    if shape == "sphere":
        v = rng.standard_normal((n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    if shape == "box":
        p = rng.uniform(-1, 1, (n, 3))
        axis = rng.integers(0, 3, n)
        p[np.arange(n), axis] = rng.choice([-1.0, 1.0], n)
        return p * np.array([1.0, 0.7, 0.5])
    if shape == "cylinder":
        t = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(-1, 1, n)
        return np.stack([0.6 * np.cos(t), 0.6 * np.sin(t), z], axis=1)
    if shape == "torus":
        u, v = rng.uniform(0, 2 * np.pi, (2, n))
        r = 0.7 + 0.3 * np.cos(v)
        return np.stack([r * np.cos(u), r * np.sin(u), 0.3 * np.sin(v)], axis=1)
    if shape == "plane":
        p = rng.uniform(-1, 1, (n, 3))
        p[:, 2] = 0.15 * np.sin(2.5 * p[:, 0]) * np.cos(2.0 * p[:, 1])
        return p
    raise ValueError(f"unknown primitive {shape!r}; expected one of {PRIMITIVES}")


def voxelize(points: np.ndarray, bitdepth: int) -> PointCloud:
    """Floor to the integer grid, drop points outside it, deduplicate."""
    v = np.floor(points).astype(np.int64)
    keep = np.all((v >= 0) & (v < (1 << bitdepth)), axis=1)
    if not keep.any():
        raise ValueError("no points fall inside the voxel grid")
    return PointCloud(v[keep], bitdepth)


def _pose(rng, bitdepth: int, extent: float):
    size = 1 << bitdepth
    half = 0.5 * extent * size
    # on tiny grids the margin can vanish; the centre then sits mid-grid
    lo, hi = min(half + 1, 0.5 * size), max(size - half - 1, 0.5 * size)
    centre = rng.uniform(lo, hi, 3)
    return Rotation.random(random_state=rng), half, centre


def _place(unit_points, rot, half, centre):
    # 1/sqrt(3) keeps rotated corners of the unit cube inside the extent
    return rot.apply(unit_points) * half * 0.57 + centre


def _n_samples(half: float, density: float = 60.0) -> int:
    return int(density * half * half) + 200


# roughly one sample per surface voxel, so jitter scatters rather than thickens
_OOD_DENSITY = 5.0


def toy_cloud(rng: np.random.Generator, bitdepth: int | None = None, shape: str | None = None, extent=None) -> PointCloud:
    """One clean primitive surface."""
    bitdepth = int(rng.integers(6, 9)) if bitdepth is None else bitdepth
    shape = PRIMITIVES[rng.integers(len(PRIMITIVES))] if shape is None else shape
    extent = rng.uniform(0.45, 0.9) if extent is None else extent
    rot, half, centre = _pose(rng, bitdepth, extent)
    pts = _place(sample_surface(shape, _n_samples(half), rng), rot, half, centre)
    return voxelize(pts, bitdepth)


def ood_cloud(
    rng: np.random.Generator,
    bitdepth: int | None = None,
    shape: str | None = None,
    extent=None,
    jitter: float = 1.5,
    keep: float = 0.5,
) -> PointCloud:
    """A primitive surface with Gaussian jitter (voxels) and random dropout."""
    bitdepth = int(rng.integers(6, 9)) if bitdepth is None else bitdepth
    shape = PRIMITIVES[rng.integers(len(PRIMITIVES))] if shape is None else shape
    extent = rng.uniform(0.45, 0.9) if extent is None else extent
    rot, half, centre = _pose(rng, bitdepth, extent)
    pts = _place(sample_surface(shape, _n_samples(half, _OOD_DENSITY), rng), rot, half, centre)
    pts = pts + rng.normal(0.0, jitter, pts.shape)
    pts = pts[rng.random(len(pts)) < keep]
    return voxelize(pts, bitdepth)


def random_cloud(rng: np.random.Generator, n_points: int, bitdepth: int) -> PointCloud:
    """Roughly ``n_points`` voxels: a jittered surface blended with uniform clutter."""
    size = 1 << bitdepth
    if n_points >= size**3:
        raise ValueError("grid too small for the requested point count")
    out = np.empty((0, 3), dtype=np.int64)
    shape = PRIMITIVES[rng.integers(len(PRIMITIVES))]
    while len(out) < n_points:
        n_surf = int(0.8 * n_points)
        pts = sample_surface(shape, n_surf, rng) * (0.45 * size) + 0.5 * size
        pts += rng.normal(0.0, rng.uniform(0.0, 2.0), pts.shape)
        clutter = rng.uniform(0, size, (n_points - n_surf, 3))
        v = np.floor(np.concatenate([pts, clutter])).astype(np.int64)
        v = v[np.all((v >= 0) & (v < size), axis=1)]
        out = np.unique(np.concatenate([out, v]), axis=0)
    idx = rng.choice(len(out), n_points, replace=False)
    return PointCloud(out[idx], bitdepth)


def toy_dataset(n: int, seed: int = 0, bitdepth=None, extent=None) -> list:
    rng = np.random.default_rng(seed)
    return [toy_cloud(rng, bitdepth=bitdepth, extent=extent) for _ in range(n)]


def gopc_sequence(
    T: int,
    seed: int = 0,
    bitdepth: int = 7,
    ood: bool = False,
    keep: float = 0.5,
    shape: str | None = None,
    extent: float = 0.6,
) -> list:
    """``T`` frames of one primitive drifting and spinning slowly."""
    rng = np.random.default_rng(seed)
    shape = PRIMITIVES[rng.integers(len(PRIMITIVES))] if shape is None else shape
    rot0, half, centre = _pose(rng, bitdepth, extent)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    drift = rng.normal(0.0, 0.15, 3)
    unit = sample_surface(shape, _n_samples(half, _OOD_DENSITY if ood else 60.0), rng)
    frames = []
    for t in range(T):
        rot = Rotation.from_rotvec(axis * 0.03 * t) * rot0
        pts = _place(unit, rot, half, centre + drift * t)
        if ood:
            pts = pts + rng.normal(0.0, 1.5, pts.shape)
            pts = pts[rng.random(len(pts)) < keep]
        frames.append(voxelize(pts, bitdepth))
    return frames


def augment_cloud(pc: PointCloud, rng: np.random.Generator) -> PointCloud:
    """Random cube symmetry (axis permutation and flips) plus a random shift
    that keeps every voxel on the grid. Shifts move octree cell boundaries, so
    the coarser scales change as well, not just the orientation."""
    size = 1 << pc.bitdepth
    c = pc.coords[:, rng.permutation(3)]
    flips = rng.random(3) < 0.5
    c = np.where(flips, size - 1 - c, c)
    lo, hi = c.min(axis=0), c.max(axis=0)
    shift = np.array([rng.integers(-l, size - h) for l, h in zip(lo, hi)])
    return PointCloud(c + shift, pc.bitdepth)
