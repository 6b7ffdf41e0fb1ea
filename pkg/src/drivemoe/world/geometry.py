"""Planar geometry: polylines with Frenet projection, oriented boxes, frame changes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def world_to_ego(points, origin, heading: float) -> np.ndarray:
    """Express world points in the frame at ``origin`` facing ``heading`` (x forward, y left)."""
    p = np.asarray(points, dtype=np.float64) - np.asarray(origin, dtype=np.float64)
    c, s = math.cos(heading), math.sin(heading)
    x = p[..., 0] * c + p[..., 1] * s
    y = -p[..., 0] * s + p[..., 1] * c
    return np.stack([x, y], axis=-1)


def ego_to_world(points, origin, heading: float) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    c, s = math.cos(heading), math.sin(heading)
    x = p[..., 0] * c - p[..., 1] * s + origin[0]
    y = p[..., 0] * s + p[..., 1] * c + origin[1]
    return np.stack([x, y], axis=-1)


class Polyline:
    """Piecewise-linear curve parameterized by arc length."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("polyline needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        keep = np.concatenate([[True], seglen > 1e-9])
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError("degenerate polyline")
        self.points = pts
        seg = np.diff(pts, axis=0)
        self.seglen = np.hypot(seg[:, 0], seg[:, 1])
        self.tangent = seg / self.seglen[:, None]
        self.s = np.concatenate([[0.0], np.cumsum(self.seglen)])
        self.length = float(self.s[-1])
        self.headings = np.arctan2(self.tangent[:, 1], self.tangent[:, 0])

    def segments(self) -> np.ndarray:
        """(m, 4) array of segment endpoints ``ax, ay, bx, by``."""
        return np.hstack([self.points[:-1], self.points[1:]])

    def _segment_at(self, s: float) -> int:
        return int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.seglen) - 1))

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length ``s``; clamped to the ends."""
        s = min(max(float(s), 0.0), self.length)
        i = self._segment_at(s)
        return self.points[i] + self.tangent[i] * (s - self.s[i])

    def heading_at(self, s: float) -> float:
        return float(self.headings[self._segment_at(min(max(float(s), 0.0), self.length))])

    def pose_at(self, s: float, d: float = 0.0) -> tuple[np.ndarray, float]:
        """World point at arc length ``s`` displaced ``d`` to the left, plus heading."""
        s_c = min(max(float(s), 0.0), self.length)
        i = self._segment_at(s_c)
        t = self.tangent[i]
        p = self.points[i] + t * (s_c - self.s[i])
        # extrapolate linearly beyond the ends
        if s > self.length:
            p = p + t * (s - self.length)
        elif s < 0:
            p = p + t * s
        n = np.array([-t[1], t[0]])
        return p + n * d, float(self.headings[i])

    def project(self, point) -> tuple[float, float, int]:
        """Closest-point projection: (arc length, signed lateral offset, segment index).

        Lateral offset is positive to the left of travel direction.
        """
        p = np.asarray(point, dtype=np.float64)
        a = self.points[:-1]
        rel = p - a
        t = np.clip((rel * self.tangent).sum(axis=1), 0.0, self.seglen)
        closest = a + self.tangent * t[:, None]
        d2 = ((p - closest) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        r = p - a[i]
        lat = self.tangent[i, 0] * r[1] - self.tangent[i, 1] * r[0]
        dist = math.sqrt(d2[i])
        return float(self.s[i] + t[i]), math.copysign(dist, lat) if dist > 0 else 0.0, i

    def offset(self, d: float, step: float = 1.0) -> "Polyline":
        """Parallel curve displaced ``d`` to the left, resampled every ``step`` meters."""
        n = max(2, int(math.ceil(self.length / step)) + 1)
        ss = np.linspace(0.0, self.length, n)
        return Polyline(np.array([self.pose_at(s, d)[0] for s in ss]))

    def resample(self, step: float = 1.0) -> "Polyline":
        return self.offset(0.0, step)

    def to_list(self) -> list:
        return self.points.tolist()


def straight(start, heading: float, length: float, step: float = 2.0) -> np.ndarray:
    n = max(2, int(math.ceil(length / step)) + 1)
    ss = np.linspace(0.0, length, n)
    return np.asarray(start, dtype=np.float64) + np.outer(ss, [math.cos(heading), math.sin(heading)])


def arc(start, heading: float, radius: float, angle: float, step: float = 1.0) -> np.ndarray:
    """Circular arc from ``start``; positive ``angle`` turns left."""
    n = max(2, int(math.ceil(abs(angle) * radius / step)) + 1)
    sign = 1.0 if angle >= 0 else -1.0
    center = np.asarray(start) + radius * np.array([-math.sin(heading), math.cos(heading)]) * sign
    phis = heading - sign * math.pi / 2 + np.linspace(0.0, angle, n)
    return center + radius * np.stack([np.cos(phis), np.sin(phis)], axis=1)


def join(*pieces) -> np.ndarray:
    out = [np.asarray(pieces[0])]
    for p in pieces[1:]:
        p = np.asarray(p)
        out.append(p[1:] if np.allclose(p[0], out[-1][-1]) else p)
    return np.concatenate(out, axis=0)


@dataclass(frozen=True)
class Box:
    """Oriented rectangle: center, heading, full length and width."""

    x: float
    y: float
    heading: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
        return ego_to_world(local, (self.x, self.y), self.heading)

    def as_row(self) -> list[float]:
        return [self.x, self.y, self.heading, self.length / 2.0, self.width / 2.0]


def boxes_intersect(a: Box, b: Box) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts as contact)."""
    ca, cb = a.corners(), b.corners()
    for box in (a, b):
        for ang in (box.heading, box.heading + math.pi / 2):
            axis = np.array([math.cos(ang), math.sin(ang)])
            pa, pb = ca @ axis, cb @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True
