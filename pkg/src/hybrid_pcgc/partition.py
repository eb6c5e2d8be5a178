"""K-D tree partitioning of large clouds into sub-frames of bounded size."""

from __future__ import annotations

import numpy as np

from .octree import PointCloud

__all__ = ["kdtree_partition"]


def kdtree_partition(pc: PointCloud, target_size: int) -> list:
    """Split at the median of the longest axis until every part holds at most
    ``1.5 * target_size`` points.

    Splits are exact halves, so every leaf ends up with between
    ``0.75 * target_size`` and ``1.5 * target_size`` points (a cloud already
    within the limit stays whole). Parts are disjoint, cover the input and
    keep the parent's bitdepth.
    """
    if target_size < 1:
        raise ValueError("target_size must be >= 1")
    limit = 1.5 * target_size
    out, stack = [], [pc.coords]
    while stack:
        c = stack.pop()
        if len(c) <= limit or len(c) < 2:
            out.append(c)
            continue
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        order = np.argsort(c[:, axis], kind="stable")
        half = len(c) // 2
        stack.append(c[order[half:]])
        stack.append(c[order[:half]])
    return [PointCloud._trusted(c[np.lexsort((c[:, 2], c[:, 1], c[:, 0]))], pc.bitdepth) for c in out]
