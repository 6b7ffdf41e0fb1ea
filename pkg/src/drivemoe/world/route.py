"""Route planner: goal waypoint and maneuver command at a lookahead distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Polyline, world_to_ego, wrap_angle

COMMANDS = ("follow", "turn_left", "turn_right", "change_left", "change_right")
COMMAND_INDEX = {c: i for i, c in enumerate(COMMANDS)}
OFF_ROUTE_TOLERANCE = 6.0
TURN_THRESHOLD = 0.35  # rad of route heading change between ego and goal
LOOKAHEAD = 20.0


class OffRouteError(RuntimeError):
    """The ego is farther from the route than the tolerance."""


@dataclass(frozen=True)
class GoalWaypoint:
    x: float
    y: float
    command: str

    def encode(self, lookahead: float = LOOKAHEAD) -> np.ndarray:
        """Router input: position over lookahead plus a one-hot command (length 7)."""
        v = np.zeros(2 + len(COMMANDS))
        v[0], v[1] = self.x / lookahead, self.y / lookahead
        v[2 + COMMAND_INDEX[self.command]] = 1.0
        return v


class Route:
    """Route polyline plus explicit maneuver commands over arc-length intervals."""

    def __init__(self, points, commands=()):
        self.line = points if isinstance(points, Polyline) else Polyline(points)
        self.commands = [dict(c) for c in commands]

    @property
    def length(self) -> float:
        return self.line.length

    def command_between(self, s0: float, s1: float) -> str:
        for c in self.commands:
            if c["s0"] <= s1 and c["s1"] >= s0:
                return c["command"]
        return "follow"

    def command_at(self, s_ego: float, s_goal: float) -> str:
        dh = wrap_angle(self.line.heading_at(min(s_goal + 3.0, self.length)) - self.line.heading_at(s_ego))
        if dh > TURN_THRESHOLD:
            return "turn_left"
        if dh < -TURN_THRESHOLD:
            return "turn_right"
        return self.command_between(s_ego, s_goal)


def next_goal_waypoint(route: Route, ego, lookahead_m: float = LOOKAHEAD,
                       tolerance: float = OFF_ROUTE_TOLERANCE) -> GoalWaypoint:
    """Route point ``lookahead_m`` past the ego's projection, in the ego frame."""
    if isinstance(route, (list, np.ndarray, Polyline)):
        route = Route(route)
    s, d, _ = route.line.project(ego.position)
    if abs(d) > tolerance:
        raise OffRouteError(f"ego is {abs(d):.2f} m from the route")
    s_goal = min(s + lookahead_m, route.length)
    p = route.line.point_at(s_goal)
    x, y = world_to_ego(p, ego.position, ego.heading)
    return GoalWaypoint(float(x), float(y), route.command_at(s, s_goal))
