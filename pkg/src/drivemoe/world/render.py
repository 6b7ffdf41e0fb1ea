"""Polar egocentric rasters, one per camera sector.

Rows are range bins over ``(0, range_m]`` (row 0 nearest); columns are bearing
bins across the 60 degree sector, column 0 at the left edge. Channels:
drivable area, lane markings, agents, route, traffic-control state.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels
from .geometry import Polyline, world_to_ego
from .scenarios import KIND_INTENSITY, LANE_WIDTH
from .views import HALF_FOV, N_VIEWS, VIEW_YAW, VIEWS, view_of_bearing

CHANNELS = ("drivable", "lane_marking", "agents", "route", "signal")
GRID = 32
RANGE = 40.0
DRIVABLE_HALF = LANE_WIDTH / 2 + 0.15
MARKING_HALF = 0.5
ROUTE_HALF = 1.0
SIGNAL_HALF = 1.0
SIGNAL_VALUE = {"red": 1.0, "stop": 0.5, "green": 0.25}


def cell_polar(view: int, grid: int = GRID, range_m: float = RANGE) -> tuple[np.ndarray, np.ndarray]:
    """Range and bearing (ego frame) of every cell center of ``view``, each (grid, grid)."""
    r = (np.arange(grid) + 0.5) * range_m / grid
    w = 2 * HALF_FOV / grid
    b = VIEW_YAW[VIEWS[view]] + HALF_FOV - (np.arange(grid) + 0.5) * w
    return np.meshgrid(r, b, indexing="ij")


def cell_of(view: int, rng_m: float, bearing: float, grid: int = GRID, range_m: float = RANGE):
    w = 2 * HALF_FOV / grid
    db = math.remainder(VIEW_YAW[VIEWS[view]] + HALF_FOV - bearing, 2 * math.pi)
    row = min(max(int(rng_m / (range_m / grid)), 0), grid - 1)
    col = min(max(int(db / w), 0), grid - 1)
    return row, col


class StaticLayers:
    """Segment soup of a world's fixed geometry, grouped by raster channel."""

    def __init__(self, world):
        segs, groups = [], []
        for line, lanes in world.roads:
            for off, _ in lanes:
                segs.append(line.offset(off, 2.0).segments())
                groups.append(np.zeros(len(segs[-1]), dtype=np.int64))
            bounds = sorted({round(o + s * LANE_WIDTH / 2, 6) for o, _ in lanes for s in (-1, 1)})
            for b in bounds:
                segs.append(line.offset(b, 2.0).segments())
                groups.append(np.ones(len(segs[-1]), dtype=np.int64))
        segs.append(world.route.line.segments())
        groups.append(np.full(len(segs[-1]), 2, dtype=np.int64))
        for i, sl in enumerate(world.stop_lines):
            segs.append(np.asarray(sl["points"], dtype=np.float64).reshape(1, 4))
            groups.append(np.array([3 + i], dtype=np.int64))
        self.segments = np.concatenate(segs)
        self.groups = np.concatenate(groups)
        self.n_groups = 3 + len(world.stop_lines)
        self.mid = 0.5 * (self.segments[:, :2] + self.segments[:, 2:])
        self.half = 0.5 * np.hypot(*(self.segments[:, 2:] - self.segments[:, :2]).T)


def _layers(world) -> StaticLayers:
    cache = getattr(world, "_static_layers", None)
    if cache is None:
        cache = StaticLayers(world)
        world._static_layers = cache
    return cache


def render_views(world, ego=None, views=None, grid: int = GRID, range_m: float = RANGE) -> dict[str, np.ndarray]:
    """Render the requested views (all six by default) as ``C x S x S`` float32 arrays in [0, 1]."""
    ego = world.ego if ego is None else ego
    idx = list(range(N_VIEWS)) if views is None else [v if isinstance(v, int) else VIEWS.index(v) for v in views]
    layers = _layers(world)
    # cull segments out of sensing range
    reach = range_m + 2.0
    keep = np.hypot(layers.mid[:, 0] - ego.x, layers.mid[:, 1] - ego.y) <= reach + layers.half
    seg, grp = layers.segments[keep], layers.groups[keep]

    c, s = math.cos(ego.heading), math.sin(ego.heading)
    polar = [cell_polar(v, grid, range_m) for v in idx]
    pts_ego = np.concatenate([np.stack([r * np.cos(b), r * np.sin(b)], -1).reshape(-1, 2) for r, b in polar])
    pts = np.stack([ego.x + pts_ego[:, 0] * c - pts_ego[:, 1] * s,
                    ego.y + pts_ego[:, 0] * s + pts_ego[:, 1] * c], -1)
    dist = kernels.segment_group_min_dist(pts, seg, grp, layers.n_groups)

    n_cell = grid * grid
    out = np.zeros((len(idx), len(CHANNELS), n_cell), dtype=np.float32)
    out[:, 0] = (dist[:, 0] <= DRIVABLE_HALF).reshape(len(idx), n_cell)
    out[:, 1] = (dist[:, 1] <= MARKING_HALF).reshape(len(idx), n_cell)
    out[:, 3] = (dist[:, 2] <= ROUTE_HALF).reshape(len(idx), n_cell)
    for i in range(len(world.stop_lines)):
        val = SIGNAL_VALUE.get(world.signal_state(i), 0.25)
        hit = (dist[:, 3 + i] <= SIGNAL_HALF).reshape(len(idx), n_cell)
        out[:, 4] = np.maximum(out[:, 4], hit * val)

    # agents: each is drawn only in the view containing its center bearing
    owned: dict[int, list] = {v: [] for v in idx}
    for actor, p, _ in world.agents_ego_frame():
        rng_m = math.hypot(p[0], p[1])
        if rng_m > range_m + (actor.length + actor.width) / 2:
            continue
        v = view_of_bearing(math.atan2(p[1], p[0]))
        if v in owned:
            owned[v].append((actor, p, rng_m))
    for k, v in enumerate(idx):
        if not owned[v]:
            continue
        boxes = np.array([a.box().as_row() for a, _, _ in owned[v]])
        vals = np.array([KIND_INTENSITY[a.kind] for a, _, _ in owned[v]], dtype=np.float32)
        hit = kernels.boxes_first_hit(pts[k * n_cell:(k + 1) * n_cell], boxes)
        layer = np.where(hit >= 0, vals[np.maximum(hit, 0)], 0.0).astype(np.float32)
        for j, (actor, p, rng_m) in enumerate(owned[v]):
            if rng_m <= range_m:
                row, col = cell_of(v, rng_m, math.atan2(p[1], p[0]), grid, range_m)
                layer[row * grid + col] = max(layer[row * grid + col], vals[j])
        out[k, 2] = layer
    rasters = out.reshape(len(idx), len(CHANNELS), grid, grid)
    return {VIEWS[v]: rasters[k] for k, v in enumerate(idx)}


def to_uint8(raster: np.ndarray) -> np.ndarray:
    return np.round(np.clip(raster, 0.0, 1.0) * 255).astype(np.uint8)


def from_uint8(raster: np.ndarray) -> np.ndarray:
    return raster.astype(np.float32) / 255.0
