"""World state: ego, scripted agents, traffic control, progress and termination."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .catalogue import KNOWN_SCENARIOS
from .dynamics import EgoState, VehicleParams, step_dynamics
from .geometry import Box, Polyline, boxes_intersect, world_to_ego
from .infractions import TERMINAL, Infraction, InfractionMonitor
from .route import LOOKAHEAD, OFF_ROUTE_TOLERANCE, GoalWaypoint, OffRouteError, Route, next_goal_waypoint
from .scenarios import ScenarioSpec

DT = 0.1
SUCCESS_MARGIN = 2.0
NEARBY_RADIUS = 30.0


@dataclass
class Actor:
    id: int
    kind: str
    length: float
    width: float
    path: Polyline
    s: float
    speed: float
    target_speed: float
    accel: float
    trigger: dict | None
    resume: dict | None
    triggered: bool = False
    reached_at: float | None = None
    active: bool = True

    @property
    def is_static(self) -> bool:
        return self.kind == "static"

    def pose(self) -> tuple[np.ndarray, float]:
        return self.path.pose_at(self.s)

    def box(self) -> Box:
        p, h = self.pose()
        return Box(float(p[0]), float(p[1]), h, self.length, self.width)

    def velocity(self) -> np.ndarray:
        h = self.path.heading_at(self.s)
        return self.speed * np.array([math.cos(h), math.sin(h)])


class World:
    """A single deterministic episode instance built from a :class:`ScenarioSpec`."""

    def __init__(self, spec: ScenarioSpec, params: VehicleParams = VehicleParams(), history_len: int = 4,
                 dt: float = DT):
        if spec.scenario_id not in KNOWN_SCENARIOS:
            raise KeyError(f"unknown scenario_id {spec.scenario_id!r}")
        self.spec = spec
        self.params = params
        self.dt = dt
        self.time = 0.0
        self.steps = 0
        self.roads = [(Polyline(r["centerline"]), [tuple(l) for l in r["lanes"]]) for r in spec.roads]
        self.ego_road = self.roads[spec.ego_road][0]
        self.route = Route(spec.route, spec.route_commands)
        self.stop_lines = spec.stop_lines
        self.junctions = spec.junctions
        p, h = self.ego_road.pose_at(spec.ego_start["s"], spec.ego_start["d"])
        self.ego = EgoState.initial(float(p[0]), float(p[1]), h, spec.ego_start["speed"], history_len)
        self.actors = [
            Actor(a["id"], a["kind"], a["length"], a["width"], Polyline(a["path"]), a["s0"], a["speed"],
                  a["target_speed"], a["accel"], a["trigger"], a["resume"])
            for a in spec.actors
        ]
        self.monitor = InfractionMonitor()
        self.progress = 0.0
        self.done = False
        self.success = False
        self.ego_speeds: list[float] = []
        self.traffic_speeds: list[float] = []
        self.lon_jerk: list[float] = []
        self.lat_accel: list[float] = []
        self._events_active: list[dict] = []
        self._events_done: set[int] = set()

    # ------------------------------------------------------------------ queries
    @property
    def infractions(self) -> list[Infraction]:
        return self.monitor.log

    def ego_box(self) -> Box:
        return self.ego.box(self.params)

    def ego_front(self) -> np.ndarray:
        e = self.ego
        return np.array([e.x + math.cos(e.heading) * self.params.length / 2,
                         e.y + math.sin(e.heading) * self.params.length / 2])

    def boxes_touch(self, ego_box: Box, actor: Actor) -> bool:
        p, _ = actor.pose()
        reach = (self.params.length + self.params.width + actor.length + actor.width) / 2
        if abs(p[0] - ego_box.x) > reach or abs(p[1] - ego_box.y) > reach:
            return False
        return boxes_intersect(ego_box, actor.box())

    def ego_frenet(self) -> tuple[float, float]:
        s, d, _ = self.ego_road.project(self.ego.position)
        return s, d

    def signal_state(self, i: int) -> str:
        state = "green"
        for t0, st in self.stop_lines[i]["phases"]:
            if self.time + 1e-9 >= t0:
                state = st
        return state

    def stop_line_distance(self, i: int) -> float:
        """Signed distance along the ego road from the ego front to stop line ``i``."""
        s, _ = self.ego_frenet()
        return self.stop_lines[i]["road_s"] - (s + self.params.length / 2)

    def in_junction(self, point=None, margin: float = 0.0) -> bool:
        p = self.ego.position if point is None else np.asarray(point)
        return any(math.dist(p, j["center"]) <= j["radius"] + margin for j in self.junctions)

    def in_wrong_lane(self) -> bool:
        if self.spec.allow_opposing or self.in_junction():
            return False
        _, d = self.ego_frenet()
        lanes = self.roads[self.spec.ego_road][1]
        off, direction = min(lanes, key=lambda l: abs(l[0] - d))
        return direction < 0 and abs(d - off) < 1.75

    def goal(self, lookahead: float = LOOKAHEAD) -> GoalWaypoint:
        return next_goal_waypoint(self.route, self.ego, lookahead)

    def route_completion(self) -> float:
        if self.success:
            return 1.0
        return min(1.0, self.progress / self.route.length)

    def nearby_traffic_speed(self) -> float:
        speeds = [a.speed for a in self.actors
                  if a.active and a.kind in ("vehicle", "emergency")
                  and math.dist(a.pose()[0], self.ego.position) <= NEARBY_RADIUS]
        return float(np.mean(speeds)) if speeds else float("nan")

    def agents_ego_frame(self) -> list[tuple[Actor, np.ndarray, float]]:
        """Active actors with their ego-frame centers and relative headings."""
        out = []
        for a in self.actors:
            if not a.active:
                continue
            p, h = a.pose()
            out.append((a, world_to_ego(p, self.ego.position, self.ego.heading), h - self.ego.heading))
        return out

    # ------------------------------------------------------------------ dynamics
    def _trigger_fires(self, actor: Actor, ego_s: float) -> bool:
        trig = actor.trigger
        if trig is None:
            return False
        if trig["type"] == "time":
            return self.time >= trig["t"]
        if trig["type"] == "ego_s":
            return ego_s >= trig["s"]
        raise ValueError(f"unknown trigger type {trig['type']!r}")

    def _step_actors(self, ego_s: float) -> None:
        for a in self.actors:
            if not a.active or a.is_static:
                continue
            target = a.speed
            if a.trigger is None or a.triggered:
                target = a.target_speed
            elif self._trigger_fires(a, ego_s):
                a.triggered = True
                target = a.target_speed
            if a.triggered and a.resume is not None:
                if a.reached_at is None and abs(a.speed - a.target_speed) < 1e-9:
                    a.reached_at = self.time
                if a.reached_at is not None and self.time - a.reached_at >= a.resume["after"]:
                    a.target_speed = target = a.resume["speed"]
                    a.resume = None
            dv = target - a.speed
            step = a.accel * self.dt
            a.speed = target if abs(dv) <= step else a.speed + math.copysign(step, dv)
            a.s += a.speed * self.dt
            if a.s >= a.path.length:
                a.active = False

    def _apply_events(self, control, ego_s: float):
        throttle, brake, steer = control
        for i, ev in enumerate(self.spec.events):
            if ev["type"] != "control_loss":
                continue
            if i not in self._events_done and ego_s >= ev["ego_s"]:
                self._events_done.add(i)
                self._events_active.append({"until": self.time + ev["duration"], "steer": ev["steer"]})
        for ev in self._events_active:
            if self.time < ev["until"]:
                steer += ev["steer"]
        return throttle, brake, steer

    def step(self, control) -> list[Infraction]:
        """Advance one tick; returns infractions raised during it."""
        if self.done:
            raise RuntimeError("episode already finished")
        ego_s, _ = self.ego_frenet()
        control = self._apply_events(control, ego_s)
        prev_front = self.ego_front()
        prev_acc = self.ego.acceleration
        prev_heading = self.ego.heading
        self.ego = step_dynamics(self.ego, control, self.dt, self.params)
        self._step_actors(ego_s)
        self.time = round(self.time + self.dt, 10)
        self.steps += 1

        self.ego_speeds.append(self.ego.velocity)
        self.traffic_speeds.append(self.nearby_traffic_speed())
        self.lon_jerk.append((self.ego.acceleration - prev_acc) / self.dt)
        yaw_rate = math.remainder(self.ego.heading - prev_heading, 2 * math.pi) / self.dt
        self.lat_accel.append(self.ego.velocity * yaw_rate)

        new = self.monitor.update(self, prev_front, self.ego_front(), self.time)
        s, d, _ = self.route.line.project(self.ego.position)
        if abs(d) > OFF_ROUTE_TOLERANCE:
            new += self.monitor.terminal("off_route", self.time)
        else:
            self.progress = max(self.progress, s)
        if self.progress >= self.route.length - SUCCESS_MARGIN:
            self.success = not any(i.kind in TERMINAL for i in self.infractions)
            self.done = True
        elif any(i.kind in TERMINAL for i in new):
            self.done = True
        elif self.time >= self.spec.time_budget - 1e-9:
            new += self.monitor.terminal("route_timeout", self.time)
            self.done = True
        return new

    def episode_success(self) -> bool:
        """Finished the route in time with no infractions at all."""
        return self.success and not self.infractions


__all__ = ["Actor", "World", "DT", "OffRouteError"]
