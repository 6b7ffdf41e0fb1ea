"""Scenario specifications and procedural generators for every catalogued scenario.

A :class:`ScenarioSpec` is a plain, JSON-serializable description of roads,
the ego route, scripted actors and traffic control. Generators are
deterministic functions of ``(scenario_id, seed, variant)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .catalogue import ALL_SCENARIOS, CALIBRATION_SCENARIOS, KNOWN_SCENARIOS
from .geometry import Polyline, arc, join, straight

SPEC_VERSION = 1
LANE_WIDTH = 3.5
CRUISE = 6.0

VEHICLE = (4.6, 1.9)
PEDESTRIAN = (0.6, 0.6)
BICYCLE = (1.8, 0.7)

# channel intensities for the agent raster layer
KIND_INTENSITY = {"emergency": 1.0, "vehicle": 0.8, "bicycle": 0.6, "pedestrian": 0.6, "static": 0.4}


@dataclass
class ScenarioSpec:
    scenario_id: str
    seed: int
    variant: int = 0
    roads: list = field(default_factory=list)
    ego_road: int = 0
    route: list = field(default_factory=list)
    route_offsets: list = field(default_factory=list)
    route_commands: list = field(default_factory=list)
    ego_start: dict = field(default_factory=dict)
    actors: list = field(default_factory=list)
    stop_lines: list = field(default_factory=list)
    junctions: list = field(default_factory=list)
    events: list = field(default_factory=list)
    time_budget: float = 60.0
    allow_opposing: bool = False
    cruise_speed: float = CRUISE
    meta: dict = field(default_factory=dict)
    version: int = SPEC_VERSION

    def validate(self) -> "ScenarioSpec":
        if self.scenario_id not in KNOWN_SCENARIOS:
            raise KeyError(f"unknown scenario_id {self.scenario_id!r}")
        if Polyline(self.route).length <= 0:
            raise ValueError("route length must be positive")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        doc = json.loads(text)
        if doc.get("version") != SPEC_VERSION:
            raise ValueError(f"unsupported scenario spec version {doc.get('version')!r}")
        return cls(**doc).validate()


# --------------------------------------------------------------------------
# layout helpers


def _road(name: str, centerline: np.ndarray, lanes) -> dict:
    return {"name": name, "centerline": np.round(centerline, 6).tolist(), "lanes": [list(l) for l in lanes]}


def _offset_path(center: Polyline, offsets: list, step: float = 1.0) -> list:
    """Polyline following ``center`` with a piecewise-linear lateral offset profile."""
    ss = np.arange(0.0, center.length + 1e-9, step)
    s_k = [o[0] for o in offsets]
    d_k = [o[1] for o in offsets]
    pts = [center.pose_at(s, float(np.interp(s, s_k, d_k)))[0] for s in ss]
    return np.round(np.array(pts), 6).tolist()


def _actor(actor_id: int, kind: str, path, s0: float, speed: float, target_speed: float | None = None,
           accel: float = 3.0, trigger: dict | None = None, resume: dict | None = None,
           size: tuple | None = None) -> dict:
    length, width = size or (PEDESTRIAN if kind == "pedestrian" else BICYCLE if kind == "bicycle" else VEHICLE)
    return {
        "id": actor_id, "kind": kind, "length": length, "width": width,
        "path": np.round(np.asarray(path, dtype=float), 6).tolist(), "s0": float(s0),
        "speed": float(speed), "target_speed": float(speed if target_speed is None else target_speed),
        "accel": float(accel), "trigger": trigger, "resume": resume,
    }


def _budget(route_len: float, extra: float = 15.0) -> float:
    return round(route_len / 3.0 + extra, 3)


def _straight_base(rng, length: float = 100.0, lanes=((0.0, 1), (LANE_WIDTH, -1))):
    center = straight((0.0, 0.0), 0.0, length, step=2.0)
    return center, [_road("main", center, lanes)]


def _junction_layout(turn: str, approach: float = 40.0, radius: float = 10.0, exit_len: float = 40.0):
    """Ego road with a junction: straight approach, then left/right arc or straight through."""
    a = straight((0.0, 0.0), 0.0, approach, step=2.0)
    if turn == "straight":
        through = straight((approach, 0.0), 0.0, 2 * radius + exit_len, step=2.0)
        center = join(a, through)
        jc = np.array([approach + radius, 0.0])
        cross = straight((approach + radius, -50.0), math.pi / 2, 100.0, step=2.0)
    else:
        ang = math.pi / 2 if turn == "left" else -math.pi / 2
        bend = arc((approach, 0.0), 0.0, radius, ang, step=1.0)
        exit_dir = math.pi / 2 if turn == "left" else -math.pi / 2
        out = straight(bend[-1], exit_dir, exit_len, step=2.0)
        center = join(a, bend, out)
        sign = 1.0 if turn == "left" else -1.0
        jc = np.array([approach + radius / 2, sign * radius / 2])
        cross_start = bend[-1] - 45.0 * np.array([math.cos(exit_dir), math.sin(exit_dir)])
        cross = straight(cross_start, exit_dir, 45.0 + exit_len, step=2.0)
    roads = [
        _road("main", center, ((0.0, 1), (LANE_WIDTH, -1))),
        _road("cross", cross, ((0.0, 1), (LANE_WIDTH, -1))),
    ]
    if turn != "straight":
        cont = straight((approach, 0.0), 0.0, 2 * radius + 20.0, step=2.0)
        roads.append(_road("continuation", cont, ((0.0, 1), (LANE_WIDTH, -1))))
    junction = {"center": jc.round(6).tolist(), "radius": radius + 3.0}
    return center, roads, junction


def _stop_line(center: Polyline, s: float, kind: str, phases) -> dict:
    p, h = center.pose_at(s, 0.0)
    n = np.array([-math.sin(h), math.cos(h)])
    a = p - n * LANE_WIDTH / 2
    b = p + n * LANE_WIDTH / 2
    return {"points": np.round([a, b], 6).tolist(), "kind": kind, "phases": [list(x) for x in phases], "road_s": s}


def _finish(spec: ScenarioSpec, center: np.ndarray, offsets=None, ego_s: float = 5.0,
            ego_d: float | None = None, ego_speed: float = CRUISE, extra_time: float = 15.0) -> ScenarioSpec:
    poly = Polyline(center)
    offsets = offsets or [[0.0, 0.0], [poly.length, 0.0]]
    spec.route_offsets = [list(map(float, o)) for o in offsets]
    # route starts at the ego start and runs to the end of the ego road
    full = _offset_path(poly, offsets)
    start_idx = int(round(ego_s))
    spec.route = full[start_idx:]
    d0 = float(np.interp(ego_s, [o[0] for o in offsets], [o[1] for o in offsets])) if ego_d is None else ego_d
    spec.ego_start = {"s": float(ego_s), "d": d0, "speed": float(ego_speed)}
    spec.time_budget = _budget(Polyline(spec.route).length, extra_time)
    return spec.validate()


def _ego_pose(spec: ScenarioSpec):
    center = Polyline(spec.roads[spec.ego_road]["centerline"])
    return center.pose_at(spec.ego_start["s"], spec.ego_start["d"])


# --------------------------------------------------------------------------
# generators


def gen_obstacle(spec: ScenarioSpec, rng: np.random.Generator, two_ways: bool, kind: str = "static"):
    lanes = ((0.0, 1), (LANE_WIDTH, -1 if two_ways else 1))
    center, spec.roads = _straight_base(rng, 100.0, lanes)
    poly = Polyline(center)
    s_obs = 42.0 + rng.uniform(0.0, 10.0)
    size = (4.6, 2.0) if spec.variant % 2 == 0 else (3.0, 1.6)
    obs_path = [poly.pose_at(s_obs, 0.0)[0], poly.pose_at(s_obs + 1.0, 0.0)[0]]
    spec.actors.append(_actor(0, "static", obs_path, 0.0, 0.0, size=size))
    if spec.scenario_id.startswith("Accident"):
        second = [poly.pose_at(s_obs + 6.0, -0.3)[0], poly.pose_at(s_obs + 7.0, -0.3)[0]]
        spec.actors.append(_actor(1, "static", second, 0.0, 0.0, size=(4.6, 1.9)))
    if two_ways:
        spec.allow_opposing = True
        lane = Polyline(_offset_path(poly, [[0, LANE_WIDTH], [poly.length, LANE_WIDTH]]))
        rev = lane.points[::-1]
        start = 15.0 + rng.uniform(0.0, 15.0)
        spec.actors.append(_actor(2, "vehicle", rev, start, 5.0 + rng.uniform(0, 1.5)))
    else:
        # same-direction traffic well ahead in the passing lane
        lane = _offset_path(poly, [[0, LANE_WIDTH], [poly.length, LANE_WIDTH]])
        spec.actors.append(_actor(2, "vehicle", lane, 30.0 + rng.uniform(0, 10), 6.5))
    spec.meta["obstacle_s"] = s_obs
    return _finish(spec, center, ego_speed=CRUISE)


def gen_crossing(spec: ScenarioSpec, rng: np.random.Generator, kind: str = "pedestrian"):
    center, spec.roads = _straight_base(rng, 100.0)
    poly = Polyline(center)
    s_c = 45.0 + rng.uniform(0.0, 12.0)
    side = -1.0 if spec.variant % 2 == 0 else 1.0
    start = poly.pose_at(s_c, side * 6.5)[0]
    end = poly.pose_at(s_c, -side * 9.0)[0]
    speed = 1.4 if kind == "pedestrian" else 3.0
    lead = 20.0 if kind == "pedestrian" else 26.0
    trig = {"type": "ego_s", "s": s_c - lead}
    spec.actors.append(_actor(0, kind, [start, end], 0.0, 0.0, target_speed=speed, accel=4.0, trigger=trig))
    spec.meta["crossing_s"] = s_c
    return _finish(spec, center)


def gen_lead_brake(spec: ScenarioSpec, rng: np.random.Generator):
    center, spec.roads = _straight_base(rng, 100.0)
    poly = Polyline(center)
    lane = _offset_path(poly, [[0, 0.0], [poly.length, 0.0]])
    t_brake = 3.0 + rng.uniform(0.0, 2.0)
    spec.actors.append(_actor(0, "vehicle", lane, 22.0 + rng.uniform(0, 4), CRUISE, target_speed=0.0,
                              accel=5.0, trigger={"type": "time", "t": t_brake},
                              resume={"after": 3.0, "speed": CRUISE}))
    return _finish(spec, center)


def gen_static_cut_in(spec: ScenarioSpec, rng: np.random.Generator):
    lanes = ((0.0, 1), (LANE_WIDTH, -1), (-LANE_WIDTH, 1))
    center, spec.roads = _straight_base(rng, 100.0, lanes)
    poly = Polyline(center)
    s_p = 48.0 + rng.uniform(0, 8)
    path = _offset_path(poly, [[0, -LANE_WIDTH], [s_p, -LANE_WIDTH], [s_p + 12, 0.0], [poly.length, 0.0]])
    spec.actors.append(_actor(0, "vehicle", path, s_p, 0.0, target_speed=4.0, accel=2.5,
                              trigger={"type": "ego_s", "s": s_p - 20.0}))
    return _finish(spec, center)


def gen_control_loss(spec: ScenarioSpec, rng: np.random.Generator):
    center, spec.roads = _straight_base(rng, 100.0)
    s_e = 35.0 + rng.uniform(0, 10)
    spec.events.append({"type": "control_loss", "ego_s": s_e, "duration": 0.8,
                        "steer": float(rng.choice([-0.3, 0.3]))})
    return _finish(spec, center)


def gen_emergency(spec: ScenarioSpec, rng: np.random.Generator):
    lanes = ((0.0, 1), (-LANE_WIDTH, 1), (LANE_WIDTH, -1))
    center, spec.roads = _straight_base(rng, 110.0, lanes)
    poly = Polyline(center)
    lane = _offset_path(poly, [[0, 0.0], [poly.length, 0.0]])
    back = 30.0 + 10.0 * (spec.variant % 2) + rng.uniform(0, 6)
    ego_s = 35.0
    speed = 12.0 + rng.uniform(0, 2)
    spec.actors.append(_actor(0, "emergency", lane, ego_s - back, speed))
    spec.meta["yield_offset"] = -LANE_WIDTH
    return _finish(spec, center, ego_s=ego_s, extra_time=10.0)


def gen_invading(spec: ScenarioSpec, rng: np.random.Generator):
    lanes = ((0.0, 1), (LANE_WIDTH, -1), (-LANE_WIDTH, 1))
    center, spec.roads = _straight_base(rng, 100.0, lanes)
    poly = Polyline(center)
    s0 = 45.0 + rng.uniform(0, 8)
    invade = 1.6 if spec.variant % 2 == 0 else 1.9
    prof = [[0, LANE_WIDTH], [s0 - 10, LANE_WIDTH], [s0, invade], [s0 + 25, invade], [s0 + 35, LANE_WIDTH],
            [poly.length, LANE_WIDTH]]
    path = Polyline(_offset_path(poly, prof)).points[::-1]
    path_len = Polyline(path).length
    n = 2 + spec.variant % 2
    for i in range(n):
        # actors drive against the ego along the reversed path
        s_start = path_len - (s0 + 40.0 + 14.0 * i)
        spec.actors.append(_actor(i, "vehicle", path, s_start, 0.0, target_speed=5.0, accel=3.0,
                                  trigger={"type": "ego_s", "s": 12.0}))
    spec.meta["dodge_offset"] = -1.5
    spec.meta["invade_window"] = [s0 - 8, s0 + 30]
    return _finish(spec, center)


def gen_cut_in(spec: ScenarioSpec, rng: np.random.Generator):
    side = -1.0 if spec.variant % 2 == 0 else 1.0
    lanes = ((0.0, 1), (side * LANE_WIDTH, 1))
    center, spec.roads = _straight_base(rng, 100.0, lanes)
    poly = Polyline(center)
    s_cut = 30.0 + rng.uniform(0, 8)
    path = _offset_path(poly, [[0, side * LANE_WIDTH], [s_cut, side * LANE_WIDTH], [s_cut + 14, 0.0],
                               [poly.length, 0.0]])
    spec.actors.append(_actor(0, "vehicle", path, 12.0 + rng.uniform(0, 4), 6.5, target_speed=4.0, accel=1.0,
                              trigger={"type": "ego_s", "s": s_cut - 12.0}))
    spec.meta["merging_side"] = "right" if side < 0 else "left"
    return _finish(spec, center)


def gen_lane_change(spec: ScenarioSpec, rng: np.random.Generator):
    side = 1.0 if spec.variant % 2 == 0 else -1.0
    lanes = ((0.0, 1), (side * LANE_WIDTH, 1))
    center, spec.roads = _straight_base(rng, 110.0, lanes)
    poly = Polyline(center)
    s_lc = 40.0 + rng.uniform(0, 6)
    off = side * LANE_WIDTH
    offsets = [[0, 0.0], [s_lc, 0.0], [s_lc + 18, off], [poly.length, off]]
    # original lane closes ahead
    block_s = s_lc + 38.0
    spec.actors.append(_actor(0, "static", [poly.pose_at(block_s, 0.0)[0], poly.pose_at(block_s + 1, 0.0)[0]],
                              0.0, 0.0, size=(2.0, 3.0)))
    target = _offset_path(poly, [[0, off], [poly.length, off]])
    slow = spec.scenario_id in ("MergeIntoSlowTraffic", "MergerIntoSlowTrafficV2")
    if slow:
        for i in range(2):
            spec.actors.append(_actor(1 + i, "vehicle", target, 30.0 + 16.0 * i + rng.uniform(0, 4), 3.5))
    else:
        spec.actors.append(_actor(1, "vehicle", target, rng.uniform(0.0, 8.0), 9.0 + rng.uniform(0, 1.5)))
    ego_s = 10.0
    route_s0 = s_lc - 22.0
    spec.route_commands.append({"s0": route_s0 - ego_s, "s1": s_lc + 18 - ego_s,
                                "command": "change_left" if side > 0 else "change_right"})
    return _finish(spec, center, offsets, ego_s=ego_s)


def gen_parking_exit(spec: ScenarioSpec, rng: np.random.Generator):
    lanes = ((0.0, 1), (-LANE_WIDTH, 1), (LANE_WIDTH, -1))
    center, spec.roads = _straight_base(rng, 100.0, lanes)
    poly = Polyline(center)
    ego_s = 20.0
    for ds in (-7.5, 16.0):
        p = poly.pose_at(ego_s + ds, -LANE_WIDTH)[0]
        q = poly.pose_at(ego_s + ds + 1, -LANE_WIDTH)[0]
        spec.actors.append(_actor(len(spec.actors), "static", [p, q], 0.0, 0.0, size=(4.4, 1.9)))
    lane = _offset_path(poly, [[0, 0.0], [poly.length, 0.0]])
    spec.actors.append(_actor(len(spec.actors), "vehicle", lane, rng.uniform(0.0, 6.0), 7.0 + rng.uniform(0, 1)))
    offsets = [[0, -LANE_WIDTH], [ego_s + 2, -LANE_WIDTH], [ego_s + 16, 0.0], [poly.length, 0.0]]
    spec.route_commands.append({"s0": 0.0, "s1": 16.0, "command": "change_left"})
    return _finish(spec, center, offsets, ego_s=ego_s, ego_speed=0.0, extra_time=20.0)


def gen_junction(spec: ScenarioSpec, rng: np.random.Generator, turn: str, control: str = "none",
                 traffic: str = "none"):
    center, spec.roads, junction = _junction_layout(turn)
    spec.junctions.append(junction)
    poly = Polyline(center)
    approach = 40.0
    stop_s = approach - 2.0
    ego_s = 5.0
    arrive_t = (stop_s - ego_s) / CRUISE
    if control == "red":
        spec.stop_lines.append(_stop_line(poly, stop_s, "light", [[0.0, "red"],
                                                                  [arrive_t + 3.0 + rng.uniform(0, 2), "green"]]))
    elif control == "green":
        spec.stop_lines.append(_stop_line(poly, stop_s, "light", [[0.0, "green"]]))
    elif control == "stop_sign":
        spec.stop_lines.append(_stop_line(poly, stop_s, "stop_sign", [[0.0, "stop"]]))
    cross = Polyline(spec.roads[1]["centerline"])
    if traffic == "crossing":
        # vehicle on the opposing lane of the cross road passing through the junction
        lane = Polyline(_offset_path(cross, [[0, LANE_WIDTH], [cross.length, LANE_WIDTH]])).points[::-1]
        spec.actors.append(_actor(0, "vehicle", lane, 8.0 + rng.uniform(0, 6), 0.0, target_speed=7.0,
                                  accel=4.0, trigger={"type": "ego_s", "s": 14.0}))
    elif traffic == "pedestrian":
        s_x = approach + 22.0
        a = poly.pose_at(s_x, -6.0)[0]
        b = poly.pose_at(s_x, 8.0)[0]
        spec.actors.append(_actor(0, "pedestrian", [a, b], 0.0, 0.0, target_speed=1.4, accel=4.0,
                                  trigger={"type": "ego_s", "s": s_x - 25.0}))
    elif traffic == "bicycle_flow":
        lane = Polyline(_offset_path(cross, [[0, LANE_WIDTH + 1.2], [cross.length, LANE_WIDTH + 1.2]])).points[::-1]
        for i in range(2):
            spec.actors.append(_actor(i, "bicycle", lane, 10.0 + 12.0 * i, 0.0, target_speed=4.0, accel=2.0,
                                      trigger={"type": "ego_s", "s": 12.0}))
    elif traffic == "blocked":
        exit_s = approach + math.pi * 10.0 / 2 + (4.0 if turn != "straight" else 0.0)
        if turn == "straight":
            exit_s = approach + 14.0
        lane = _offset_path(poly, [[0, 0.0], [poly.length, 0.0]])
        spec.actors.append(_actor(0, "vehicle", lane, exit_s, 0.0, target_speed=6.0, accel=2.0,
                                  trigger={"type": "time", "t": 11.0 + rng.uniform(0, 2)}))
    spec.meta["turn"] = turn
    return _finish(spec, center, ego_s=ego_s, extra_time=20.0)


GENERATORS: dict[str, Callable[[ScenarioSpec, np.random.Generator], ScenarioSpec]] = {}


def _register(names, fn):
    for n in names:
        GENERATORS[n] = fn


_register(["Accident", "ConstructionObstacle", "HazardAtSideLane", "ParkedObstacle"],
          lambda s, r: gen_obstacle(s, r, two_ways=False))
_register(["AccidentTwoWays", "ConstructionObstacleTwoWays", "HazardAtSideLaneTwoWays",
           "ParkedObstacleTwoWays", "VehicleOpenDoorTwoWays"],
          lambda s, r: gen_obstacle(s, r, two_ways=True))
_register(["PedestrianCrossing", "ParkingCrossingPedestrian"], lambda s, r: gen_crossing(s, r, "pedestrian"))
_register(["DynamicObjectCrossing"], lambda s, r: gen_crossing(s, r, "bicycle"))
_register(["HardBreakRoute"], gen_lead_brake)
_register(["StaticCutIn", "ParkingCutIn"], gen_static_cut_in)
_register(["ControlLoss"], gen_control_loss)
_register(["YieldToEmergencyVehicle"], gen_emergency)
_register(["InvadingTurn"], gen_invading)
_register(["HighwayCutIn"], gen_cut_in)
_register(["LaneChange", "HighwayExit", "MergeIntoSlowTraffic", "MergerIntoSlowTrafficV2",
           "InterurbanAdvancedActorFlow"], gen_lane_change)
_register(["ParkingExit"], gen_parking_exit)
_register(["SignalizedJunctionLeftTurn", "SignalizedJunctionLeftTurnEnterFlow", "InterurbanActorFlow"],
          lambda s, r: gen_junction(s, r, "left", "green", "crossing"))
_register(["SignalizedJunctionRightTurn", "EnterActorFlow"],
          lambda s, r: gen_junction(s, r, "right", "green", "crossing"))
_register(["NonSignalizedJunctionLeftTurn", "NonSignalizedJunctionLeftTurnEnterFlow"],
          lambda s, r: gen_junction(s, r, "left", "none", "crossing"))
_register(["NonSignalizedJunctionRightTurn"], lambda s, r: gen_junction(s, r, "right", "none", "crossing"))
_register(["CrossingBicycleFlow"], lambda s, r: gen_junction(s, r, "left", "none", "bicycle_flow"))
_register(["OppositeVehicleTakingPriority", "OppositeVehicleRunningRedLight"],
          lambda s, r: gen_junction(s, r, "straight", "green", "crossing"))
_register(["BlockedIntersection"], lambda s, r: gen_junction(s, r, "straight", "none", "blocked"))
_register(["VehicleTurningRoute", "VehicleTurningRoutePedestrian"],
          lambda s, r: gen_junction(s, r, "right", "none", "pedestrian"))
_register(["TJunction", "VanillaNonSignalizedTurn"],
          lambda s, r: gen_junction(s, r, "left" if s.variant % 2 == 0 else "right", "none"))
_register(["VanillaSignalizedTurnEncounterGreenLight"],
          lambda s, r: gen_junction(s, r, "left" if s.variant % 2 == 0 else "right", "green"))
_register(["VanillaSignalizedTurnEncounterRedLight"],
          lambda s, r: gen_junction(s, r, "left" if s.variant % 2 == 0 else "right", "red"))
_register(["VanillaNonSignalizedTurnEncounterStopsign"],
          lambda s, r: gen_junction(s, r, "left" if s.variant % 2 == 0 else "right", "stop_sign"))



def gen_straight_route(spec: ScenarioSpec, rng: np.random.Generator):
    """Empty two-lane road; the route keeps the right lane for its whole length."""
    center, spec.roads = _straight_base(rng, length=100.0 + 20.0 * spec.variant)
    return _finish(spec, center)


_register(CALIBRATION_SCENARIOS, gen_straight_route)

assert set(GENERATORS) == set(KNOWN_SCENARIOS), set(KNOWN_SCENARIOS) ^ set(GENERATORS)


def make_spec(scenario_id: str, seed: int, variant: int = 0) -> ScenarioSpec:
    """Build the deterministic spec for ``(scenario_id, seed, variant)``."""
    if scenario_id not in GENERATORS:
        raise KeyError(f"unknown scenario_id {scenario_id!r}")
    rng = np.random.default_rng([seed, variant, KNOWN_SCENARIOS.index(scenario_id)])
    spec = ScenarioSpec(scenario_id=scenario_id, seed=int(seed), variant=int(variant))
    return GENERATORS[scenario_id](spec, rng)
