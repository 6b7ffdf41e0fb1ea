"""Privileged scripted driver used to produce demonstrations and annotation context.

The expert reasons in Frenet coordinates (s along the ego road, d to its left)
and emits the same 10-waypoint plan the learned planner predicts; its controls
come from the shared PID follower so demonstrations and policies act alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..annotator import FrameContext
from ..control import ControllerState, compute_controls
from .geometry import world_to_ego, wrap_angle
from .route import OffRouteError
from .scenarios import LANE_WIDTH
from .views import VIEWS, view_of_point

N_WAYPOINTS = 10
WAYPOINT_DT = 0.2
COMFORT_DECEL = 2.5
PLAN_ACCEL = 2.0
PLAN_DECEL = 5.0
LAT_ACCEL = 2.5
LATERAL_DECAY_M = 5.0
FOLLOW_GAP = 4.0
CORRIDOR_MARGIN = 0.6
STATIC_MARGIN = 0.3
PREDICT_HORIZON = 5.0
EV_RANGE = 45.0
ROUTE_LOOKAHEAD = 15.0
WAIT_GAP = 12.0  # room to swing out from behind a blocked lane


@dataclass
class _Track:
    actor: object
    s: float
    d: float
    vs: float
    vd: float


@dataclass
class Expert:
    """Stateful per-episode scripted driver."""

    world: object
    ctrl: ControllerState = field(default_factory=ControllerState)
    stopped_lines: set = field(default_factory=set)
    stop_clock: dict = field(default_factory=dict)
    yielding: bool = False

    # ------------------------------------------------------------------ helpers
    def _tracks(self) -> list[_Track]:
        road = self.world.ego_road
        out = []
        for a in self.world.actors:
            if not a.active:
                continue
            p, h = a.pose()
            s, d, _ = road.project(p)
            rel = wrap_angle(h - road.heading_at(s))
            out.append(_Track(a, s, d, a.speed * math.cos(rel), a.speed * math.sin(rel)))
        return out

    def _lane_dir(self, d: float) -> int:
        lanes = self.world.roads[self.world.spec.ego_road][1]
        off, direction = min(lanes, key=lambda l: abs(l[0] - d))
        return direction if abs(off - d) < LANE_WIDTH / 2 + 0.3 else 0

    def _nearest_lane(self, d: float) -> float:
        lanes = self.world.roads[self.world.spec.ego_road][1]
        return min((l[0] for l in lanes), key=lambda o: abs(o - d))

    def _route_d(self, s: float) -> float:
        offs = self.world.spec.route_offsets
        return float(np.interp(s, [o[0] for o in offs], [o[1] for o in offs]))

    def _half_len(self) -> float:
        return self.world.params.length / 2

    # ------------------------------------------------------------------ lateral
    def _lateral_target(self, s_e: float, d_e: float, tracks) -> tuple[float, dict]:
        spec, meta = self.world.spec, self.world.spec.meta
        d_route = self._route_d(s_e + ROUTE_LOOKAHEAD)
        info: dict = {"obstacle_ahead": None, "stop_points": []}
        d_t = d_route

        # emergency vehicle approaching from behind: move over
        ev = [t for t in tracks if t.actor.kind == "emergency"]
        if ev:
            t = ev[0]
            behind = s_e - t.s
            if -10.0 < behind < EV_RANGE and ("yield_offset" in meta):
                self.yielding = True
            elif behind <= -10.0:
                self.yielding = False
            if self.yielding:
                d_t = meta["yield_offset"]
            info["ev"] = t

        # oncoming traffic drifting over the center line
        if "invade_window" in meta:
            lo, hi = meta["invade_window"]
            oncoming = [t for t in tracks if t.vs < -0.5 and t.s > s_e - 5.0]
            if lo <= s_e <= hi and oncoming:
                d_t = meta["dodge_offset"]

        # blocking static obstacle in the route lane: pass it on the left
        for t in tracks:
            if not t.actor.is_static or abs(t.d - d_route) > 2.0:
                continue
            ahead = t.s - s_e
            half = t.actor.length / 2
            if -(half + 8.0) <= ahead <= 35.0:
                target = self._nearest_lane(t.d) + LANE_WIDTH
                info["obstacle_ahead"] = max(ahead - half - self._half_len(), 0.0)
                if self._oncoming_blocks(s_e, d_e, t, target, tracks):
                    info["stop_points"].append(t.s - half - WAIT_GAP)
                else:
                    d_t = target
                break

        # gap acceptance for lane changes into same-direction traffic
        if abs(d_t - d_e) > 1.5 and self._lane_dir(d_t) > 0:
            if not self._gap_ok(s_e, d_t, tracks):
                d_t = self._nearest_lane(d_e)
                info["waiting_gap"] = True
        info["d_route"] = d_route
        return d_t, info

    def _oncoming_blocks(self, s_e, d_e, obstacle, target, tracks) -> bool:
        if self._lane_dir(target) >= 0:
            return False
        rear = obstacle.s - obstacle.actor.length / 2
        if s_e > rear - self._half_len() - 4.0 and d_e > 1.0:
            return False  # already committed
        end = obstacle.s + obstacle.actor.length / 2 + 10.0
        clear_t = (end - s_e) / max(self.world.ego.velocity, 3.0)
        for t in tracks:
            if t.actor.is_static or abs(t.d - target) > 2.0 or t.vs > -0.5:
                continue
            if t.s < s_e - 3.0:
                continue  # already passed us
            if (t.s - end) / -t.vs < clear_t + 1.5:
                return True
        return False

    def _gap_ok(self, s_e: float, d_t: float, tracks) -> bool:
        v_e = self.world.ego.velocity
        for t in tracks:
            if abs(t.d - d_t) > 2.0 or t.actor.is_static:
                continue
            gap = t.s - s_e  # positive: ahead
            closing = max(t.vs - v_e, 0.0)
            if -(8.0 + 3.0 * closing) <= gap <= 8.0:
                return False
        return True

    # ------------------------------------------------------------------ longitudinal
    def _speed_limits(self, s_e: float, d_e: float, d_t: float, tracks, info) -> tuple[list, float]:
        """Stop points (road s of the front bumper stop) and the curve speed cap."""
        w = self.world
        stops = list(info["stop_points"])
        front = s_e + self._half_len()
        lead_v = []
        ego_half_w = w.params.width / 2

        def planned_d(s_center: float) -> float:
            return d_t + (d_e - d_t) * math.exp(-max(s_center - s_e, 0.0) / LATERAL_DECAY_M)

        for t in tracks:
            a = t.actor
            half_w = a.width / 2 + ego_half_w + (STATIC_MARGIN if a.is_static else CORRIDOR_MARGIN)
            meet = t.s - a.length / 2 - self._half_len()
            in_corridor = abs(t.d - planned_d(meet)) < half_w or abs(t.d - d_e) < half_w and meet - s_e < 2.0
            ahead = t.s - a.length / 2 - front
            if in_corridor and -a.length / 2 < ahead + a.length / 2 and ahead < 45.0:
                if a.is_static:
                    stops.append(t.s - a.length / 2 - WAIT_GAP)
                elif t.vs >= -0.5:
                    stops.append(t.s - a.length / 2 - FOLLOW_GAP)
                    lead_v.append((t.s - a.length / 2 - FOLLOW_GAP, max(t.vs, 0.0)))
                continue
            if a.is_static or t.vs < -1.0:
                continue
            # crossing prediction
            if abs(t.vd) > 0.3 or t.actor.kind in ("pedestrian", "bicycle"):
                for k in range(1, int(PREDICT_HORIZON / 0.25) + 1):
                    tt = k * 0.25
                    ps, pd = t.s + t.vs * tt, t.d + t.vd * tt
                    if min(abs(pd - d_e), abs(pd - d_t)) < half_w and 0.0 < ps - front + a.length / 2 < 40.0:
                        stops.append(min(ps, t.s) - a.length / 2 - FOLLOW_GAP)
                        break

        # junction conflicts: wait before the stop line for traffic inside or about to enter
        for j in w.junctions:
            stop_s = w.stop_lines[0]["road_s"] if w.stop_lines else self._junction_entry(j)
            if front > stop_s + 0.5:
                continue
            for t in tracks:
                if t.actor.is_static or t.actor.speed < 0.3:
                    continue
                p = t.actor.pose()[0]
                v = t.actor.velocity()
                if any(math.dist(p + v * k * 0.25, j["center"]) <= j["radius"] + 1.0 for k in range(17)):
                    stops.append(stop_s - 0.5)

        for i, line in enumerate(w.stop_lines):
            stop_s = line["road_s"]
            if front > stop_s + 0.5:
                continue
            state = w.signal_state(i)
            if line["kind"] == "light" and state == "red":
                stops.append(stop_s - 0.8)
            elif line["kind"] == "stop_sign" and i not in self.stopped_lines:
                if w.ego.velocity < 0.2 and stop_s - 6.0 <= front <= stop_s:
                    self.stop_clock[i] = self.stop_clock.get(i, 0.0) + w.dt
                    if self.stop_clock[i] >= 0.5:
                        self.stopped_lines.add(i)
                if i not in self.stopped_lines:
                    stops.append(stop_s - 0.8)

        # curvature speed cap over the next 15 m
        road = w.ego_road
        h0 = road.heading_at(s_e)
        cap = w.spec.cruise_speed
        for ds in (5.0, 10.0, 15.0):
            dh = abs(wrap_angle(road.heading_at(s_e + ds) - h0))
            if dh > 0.05:
                radius = ds / dh
                cap = min(cap, math.sqrt(LAT_ACCEL * radius))
        info["lead"] = lead_v
        return stops, cap

    def _junction_entry(self, j) -> float:
        road = self.world.ego_road
        for s in np.arange(0.0, road.length, 0.5):
            if math.dist(road.point_at(s), j["center"]) <= j["radius"]:
                return float(s) - 1.0
        return road.length

    # ------------------------------------------------------------------ planning
    def _profile(self, s_e: float, stops, cap: float, leads) -> np.ndarray:
        """Arc-length offsets of the 10 waypoints along the road."""
        v = self.world.ego.velocity
        s = 0.0
        out = []
        front0 = s_e + self._half_len()
        dt = 0.1
        for k in range(N_WAYPOINTS * 2):
            front = front0 + s
            lim = cap
            for sp in stops:
                lim = min(lim, math.sqrt(max(0.0, 2.0 * COMFORT_DECEL * (sp - front))))
            for sp, vl in leads:
                if sp - front < 12.0:
                    lim = min(lim, vl + math.sqrt(max(0.0, 2.0 * COMFORT_DECEL * (sp - front))))
            dv = lim - v
            v = v + min(max(dv, -PLAN_DECEL * dt), PLAN_ACCEL * dt)
            v = max(v, 0.0)
            s += v * dt
            if k % 2 == 1:
                out.append(s)
        return np.array(out)

    def plan(self) -> tuple[np.ndarray, dict]:
        """Ego-frame 10x2 plan plus planning diagnostics."""
        w = self.world
        s_e, d_e = w.ego_frenet()
        tracks = self._tracks()
        d_t, info = self._lateral_target(s_e, d_e, tracks)
        stops, cap = self._speed_limits(s_e, d_e, d_t, tracks, info)
        ds = self._profile(s_e, stops, cap, info["lead"])
        dd = d_t + (d_e - d_t) * np.exp(-np.maximum(ds, 0.0) / LATERAL_DECAY_M)
        pts = np.array([w.ego_road.pose_at(s_e + a, b)[0] for a, b in zip(ds, dd)])
        if np.all(ds < 1e-6):
            plan = np.zeros((N_WAYPOINTS, 2))
        else:
            plan = world_to_ego(pts, w.ego.position, w.ego.heading)
        info.update(s=s_e, d=d_e, d_target=d_t, stops=stops, cap=cap)
        return plan, info

    def context(self, info: dict) -> FrameContext:
        w = self.world
        try:
            command = w.goal().command
        except OffRouteError:
            command = "follow"
        s_e, d_e, d_t = info["s"], info["d"], info["d_target"]
        in_junction = w.in_junction(margin=8.0)

        ev_view = None
        ev = info.get("ev")
        if ev is not None and self.yielding:
            p = world_to_ego(ev.actor.pose()[0], w.ego.position, w.ego.heading)
            ev_view = VIEWS[view_of_point(*p)]

        side = opposing = None
        lane_change_goal = info["d_route"] if info.get("waiting_gap") else d_t
        if abs(lane_change_goal - self._nearest_lane(d_e)) > LANE_WIDTH / 2 and ev_view is None:
            side = "left" if lane_change_goal > d_e else "right"
            opposing = self._lane_dir(lane_change_goal) < 0

        merging = None
        for t in self._tracks():
            if t.actor.is_static or t.actor.kind not in ("vehicle",):
                continue
            gap = t.s - s_e
            lateral = t.d - d_e
            if -5.0 < gap < 25.0 and 1.2 < abs(lateral) < 5.0 and t.vd * lateral < -0.2:
                merging = "left" if lateral > 0 else "right"
                break
        return FrameContext(
            is_in_junction=in_junction,
            command=command,
            obstacle_ahead_m=info["obstacle_ahead"],
            target_lane_side=side,
            target_lane_opposing=bool(opposing),
            merging_side=merging,
            emergency_vehicle_bearing=ev_view,
        )

    def act(self) -> tuple[np.ndarray, tuple, FrameContext]:
        plan, info = self.plan()
        ctx = self.context(info)
        control, self.ctrl = compute_controls(self.world.ego.velocity, plan, self.ctrl, self.world.dt)
        return plan, control, ctx
