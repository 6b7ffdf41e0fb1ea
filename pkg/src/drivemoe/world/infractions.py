"""Infraction records and the per-episode monitor that emits each one once."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PENALTY = {
    "collision": 0.50,
    "red_light": 0.70,
    "stop_sign": 0.80,
    "wrong_lane": 0.90,
    # terminal kinds cap completion instead of scaling the score
    "off_route": 1.0,
    "route_timeout": 1.0,
}
TERMINAL = ("off_route", "route_timeout")
STOP_SPEED = 0.3
STOP_ZONE = 6.0


@dataclass(frozen=True)
class Infraction:
    kind: str
    time: float
    penalty_factor: float
    detail: str = ""

    @classmethod
    def make(cls, kind: str, time: float, detail: str = "") -> "Infraction":
        if kind not in PENALTY:
            raise KeyError(f"unknown infraction kind {kind!r}")
        return cls(kind, round(float(time), 6), PENALTY[kind], detail)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "time": self.time, "penalty_factor": self.penalty_factor, "detail": self.detail}


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def segments_cross(p0, p1, q0, q1) -> bool:
    """Segments p0p1 and q0q1 intersect (touching counts; collinear overlap does not)."""
    d1, d2 = _cross(q0, q1, p0), _cross(q0, q1, p1)
    d3, d4 = _cross(p0, p1, q0), _cross(p0, p1, q1)
    if d1 == 0 and d2 == 0:
        return False
    return d1 * d2 <= 0 and d3 * d4 <= 0


class InfractionMonitor:
    """Stateful detector; every trigger condition fires at most once per episode or re-arm."""

    def __init__(self):
        self.collided: set[int] = set()
        self.crossed_lines: set[int] = set()
        self.stopped_at: set[int] = set()
        self.in_wrong_lane = False
        self.terminal_fired: set[str] = set()
        self.log: list[Infraction] = []

    def _emit(self, kind: str, t: float, detail: str = "") -> Infraction:
        inf = Infraction.make(kind, t, detail)
        self.log.append(inf)
        return inf

    def update(self, world, prev_front, front, t: float) -> list[Infraction]:
        out = []
        ego_box = world.ego_box()
        for actor in world.actors:
            if actor.id in self.collided or not actor.active:
                continue
            if world.boxes_touch(ego_box, actor):
                self.collided.add(actor.id)
                out.append(self._emit("collision", t, f"actor {actor.id}"))
        for i, line in enumerate(world.stop_lines):
            a, b = np.asarray(line["points"][0]), np.asarray(line["points"][1])
            if i not in self.stopped_at and world.ego.velocity < STOP_SPEED:
                dist = world.stop_line_distance(i)
                if 0.0 <= dist <= STOP_ZONE:
                    self.stopped_at.add(i)
            if i in self.crossed_lines or not segments_cross(prev_front, front, a, b):
                continue
            self.crossed_lines.add(i)
            state = world.signal_state(i)
            if line["kind"] == "light" and state == "red":
                out.append(self._emit("red_light", t, f"line {i}"))
            elif line["kind"] == "stop_sign" and i not in self.stopped_at:
                out.append(self._emit("stop_sign", t, f"line {i}"))
        wrong = world.in_wrong_lane()
        if wrong and not self.in_wrong_lane:
            out.append(self._emit("wrong_lane", t))
        self.in_wrong_lane = wrong
        return out

    def terminal(self, kind: str, t: float) -> list[Infraction]:
        if kind in self.terminal_fired:
            return []
        self.terminal_fired.add(kind)
        return [self._emit(kind, t)]


def detect_infractions(world, dt: float) -> list[Infraction]:
    """Infractions the world recorded within the last ``dt`` seconds."""
    return [i for i in world.infractions if i.time > world.time - dt - 1e-9]
