"""Pure numpy implementations of the raster kernels.

These mirror ``_raster.pyx`` exactly and are used when the compiled module is
unavailable or ``DRIVEMOE_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import numpy as np


def segment_group_min_dist(points: np.ndarray, segments: np.ndarray, groups: np.ndarray,
                           n_groups: int) -> np.ndarray:
    """Distance from each point to the nearest segment of each group.

    Args:
        points: (n, 2) query points.
        segments: (m, 4) rows ``ax, ay, bx, by``.
        groups: (m,) group id of each segment in ``[0, n_groups)``.
        n_groups: number of groups.

    Returns:
        (n, n_groups) distances; ``inf`` for groups without segments.
    """
    n = len(points)
    out = np.full((n, n_groups), np.inf)
    if len(segments) == 0 or n == 0:
        return out
    a = segments[:, 0:2]
    ab = segments[:, 2:4] - a
    L2 = (ab * ab).sum(axis=1)
    L2 = np.where(L2 > 0, L2, 1.0)
    rel = points[:, None, :] - a[None, :, :]
    t = np.clip((rel * ab[None]).sum(axis=2) / L2[None], 0.0, 1.0)
    diff = rel - t[..., None] * ab[None]
    d = np.sqrt((diff * diff).sum(axis=2))
    for g in range(n_groups):
        cols = groups == g
        if cols.any():
            out[:, g] = d[:, cols].min(axis=1)
    return out


def boxes_first_hit(points: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Index of the first box containing each point, or -1.

    Args:
        points: (n, 2) query points.
        boxes: (k, 5) rows ``cx, cy, heading, half_length, half_width``.
    """
    n = len(points)
    hit = np.full(n, -1, dtype=np.int64)
    for j in range(len(boxes) - 1, -1, -1):
        cx, cy, h, hl, hw = boxes[j]
        c, s = np.cos(h), np.sin(h)
        dx = points[:, 0] - cx
        dy = points[:, 1] - cy
        lx = dx * c + dy * s
        ly = -dx * s + dy * c
        inside = (np.abs(lx) <= hl) & (np.abs(ly) <= hw)
        hit[inside] = j
    return hit
