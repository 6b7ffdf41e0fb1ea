"""Hot raster kernels: compiled extension when built, numpy fallback otherwise.

Set ``DRIVEMOE_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _raster_py

BACKEND = "python"
if os.environ.get("DRIVEMOE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _raster as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _raster_py
else:
    _impl = _raster_py


def segment_group_min_dist(points, segments, groups, n_groups: int) -> np.ndarray:
    return _impl.segment_group_min_dist(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(segments, dtype=np.float64).reshape(-1, 4),
        np.ascontiguousarray(groups, dtype=np.int64),
        int(n_groups),
    )


def boxes_first_hit(points, boxes) -> np.ndarray:
    return _impl.boxes_first_hit(
        np.ascontiguousarray(points, dtype=np.float64),
        np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 5),
    )
