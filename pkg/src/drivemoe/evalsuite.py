"""Open-loop and closed-loop evaluation with JSON/CSV report emission.

Closed-loop rollouts run in lockstep: every tick the active episodes of one
chunk of routes are observed together, planned as one batch, and stepped.
Sampling noise is keyed per ``(seed, route, tick)`` and chunks are formed from
route order alone, so worker processes receive whole chunks and reports do
not depend on ``n_jobs`` (BLAS results can depend on batch size, so the chunk
boundaries themselves must not move).
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import WAYPOINT_DT, ControllerState, compute_controls
from .dataset import Dataset, Observer
from .model import Batch, DrivePolicy
from .planner import N_WAYPOINTS
from .world.catalogue import ALL_SCENARIOS, primary_skill
from .world.expert import Expert
from .world.geometry import world_to_ego
from .world.infractions import Infraction
from .world.scenarios import make_spec
from .world.sim import World
from .world.views import VIEWS

REPORT_SCHEMA_VERSION = 1
JERK_LIMIT = 4.0
LAT_ACCEL_LIMIT = 4.0

BENCHMARK_SCENARIOS: dict[str, tuple[tuple[str, int], ...]] = {
    "Merging": (("LaneChange", 0), ("ParkingExit", 0), ("HighwayCutIn", 0), ("SignalizedJunctionLeftTurn", 0)),
    "Overtaking": (("Accident", 0), ("ParkedObstacleTwoWays", 0), ("ConstructionObstacle", 0),
                   ("HazardAtSideLaneTwoWays", 0)),
    "EmergencyBrake": (("PedestrianCrossing", 0), ("HardBreakRoute", 0), ("StaticCutIn", 0), ("ControlLoss", 0)),
    "GiveWay": (("InvadingTurn", 0), ("InvadingTurn", 1), ("YieldToEmergencyVehicle", 0),
                ("YieldToEmergencyVehicle", 1)),
    "TrafficSign": (("VanillaSignalizedTurnEncounterRedLight", 0), ("VanillaNonSignalizedTurnEncounterStopsign", 1),
                    ("TJunction", 0), ("VanillaSignalizedTurnEncounterGreenLight", 1)),
}
EVAL_SEED_OFFSET = 1000  # evaluation seeds never overlap the demonstration seeds below this


def benchmark_routes(n_seeds: int = 5, seed_offset: int = EVAL_SEED_OFFSET) -> list[tuple[str, int, int]]:
    """``(scenario_id, seed, variant)`` for 5 skills x 4 variants x ``n_seeds``."""
    return [(sid, seed_offset + k, var) for skill in BENCHMARK_SCENARIOS
            for sid, var in BENCHMARK_SCENARIOS[skill] for k in range(n_seeds)]


def skill_bucket(scenario_id: str) -> str:
    return primary_skill(scenario_id) if scenario_id in ALL_SCENARIOS else "Calibration"


# metrics ----------------------------------------------------------------------
def open_loop_l2(pred, gt) -> float:
    """Mean Euclidean distance over waypoint pairs (batched inputs are averaged too)."""
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def driving_score(route_completion: float, infractions) -> float:
    """``100 * completion * prod(penalty factors)``; accepts Infractions, dicts or bare factors."""
    if not 0.0 <= route_completion <= 1.0:
        raise ValueError("route_completion must lie in [0, 1]")
    score = 100.0 * route_completion
    for inf in infractions:
        if isinstance(inf, Infraction):
            score *= inf.penalty_factor
        elif isinstance(inf, dict):
            score *= inf["penalty_factor"]
        else:
            score *= float(inf)
    return score


def efficiency(ego_speeds, traffic_speeds, speed_limit: float) -> float:
    """Ego mean speed as a percentage of nearby traffic speed, floored at the speed limit.

    ``traffic_speeds`` may contain NaN for ticks without nearby traffic.
    """
    ego = np.asarray(ego_speeds, dtype=np.float64)
    if ego.size == 0:
        raise ValueError("empty speed trace")
    traffic = np.asarray(traffic_speeds, dtype=np.float64)
    traffic = traffic[np.isfinite(traffic)]
    ref = max(float(traffic.mean()) if traffic.size else 0.0, speed_limit)
    return 100.0 * float(ego.mean()) / ref


def comfort(jerk, lat_accel, jerk_limit: float = JERK_LIMIT, lat_limit: float = LAT_ACCEL_LIMIT) -> float:
    """Percentage of ticks within both the jerk and the lateral-acceleration bound."""
    j, a = np.abs(np.asarray(jerk, dtype=np.float64)), np.abs(np.asarray(lat_accel, dtype=np.float64))
    if j.size == 0:
        raise ValueError("empty jerk trace")
    return 100.0 * float(np.mean((j <= jerk_limit) & (a <= lat_limit)))


# reports ----------------------------------------------------------------------
@dataclass
class EpisodeReport:
    scenario_id: str
    seed: int
    variant: int
    skill: str
    route_completion: float
    infractions: list
    success: bool
    ego_speeds: list
    traffic_speeds: list
    jerk: list
    lat_accel: list
    duration: float
    speed_limit: float
    error: str | None = None
    jerk_limit: float = JERK_LIMIT
    lat_limit: float = LAT_ACCEL_LIMIT

    @property
    def driving_score(self) -> float:
        return driving_score(self.route_completion, self.infractions)

    @property
    def efficiency(self) -> float:
        return efficiency(self.ego_speeds, self.traffic_speeds, self.speed_limit) if self.ego_speeds else 0.0

    @property
    def comfort(self) -> float:
        return comfort(self.jerk, self.lat_accel, self.jerk_limit, self.lat_limit) if self.jerk else 0.0

    def row(self) -> dict:
        return {"scenario_id": self.scenario_id, "seed": self.seed, "variant": self.variant, "skill": self.skill,
                "success": int(self.success), "route_completion": self.route_completion,
                "driving_score": self.driving_score, "efficiency": self.efficiency, "comfort": self.comfort,
                "duration": self.duration, "infractions": ";".join(i["kind"] for i in self.infractions),
                "error": self.error or ""}

    @classmethod
    def from_world(cls, world: World, variant: int, error: str | None = None) -> "EpisodeReport":
        spec = world.spec
        return cls(spec.scenario_id, spec.seed, variant, skill_bucket(spec.scenario_id),
                   0.0 if error else world.route_completion(), [i.to_dict() for i in world.infractions],
                   error is None and world.episode_success(), list(world.ego_speeds),
                   list(world.traffic_speeds), list(world.lon_jerk), list(world.lat_accel),
                   round(world.time, 6), spec.cruise_speed, error)


METRICS = ("driving_score", "success_rate", "efficiency", "comfort")


def _episode_metric(ep: EpisodeReport, name: str) -> float:
    return 100.0 * ep.success if name == "success_rate" else getattr(ep, name)


@dataclass
class BenchmarkReport:
    episodes: list[EpisodeReport]
    driving_score: float
    success_rate: float
    efficiency: float
    comfort: float
    per_skill: dict
    open_loop_l2: float | None = None
    vision_acc: float | None = None
    action_acc: float | None = None
    config: dict = field(default_factory=dict)
    seed: int | None = None

    @classmethod
    def aggregate(cls, episodes: list[EpisodeReport], **extra) -> "BenchmarkReport":
        if not episodes:
            raise ValueError("no episodes to aggregate")
        eps = sorted(episodes, key=lambda e: (e.scenario_id, e.seed, e.variant))
        overall = {m: float(np.mean([_episode_metric(e, m) for e in eps])) for m in METRICS}
        per_skill = {}
        for skill in sorted({e.skill for e in eps}):
            group = [e for e in eps if e.skill == skill]
            per_skill[skill] = {"n": len(group),
                                **{m: float(np.mean([_episode_metric(e, m) for e in group])) for m in METRICS}}
        return cls(eps, per_skill=per_skill, **overall, **extra)

    def summary(self) -> dict:
        return {"n_episodes": len(self.episodes), **{m: getattr(self, m) for m in METRICS},
                "open_loop_l2": self.open_loop_l2, "vision_acc": self.vision_acc, "action_acc": self.action_acc}

    def to_dict(self) -> dict:
        eps = []
        for e in self.episodes:
            d = asdict(e)
            d.update(driving_score=e.driving_score, efficiency=e.efficiency, comfort=e.comfort)
            eps.append(d)
        return {"schema_version": REPORT_SCHEMA_VERSION, "seed": self.seed, "config": self.config,
                "summary": self.summary(), "per_skill": self.per_skill, "episodes": eps}

    def save(self, stem) -> tuple[Path, Path]:
        """Write ``<stem>.json`` (full report) and ``<stem>.csv`` (one row per episode)."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        js, cs = stem.with_suffix(".json"), stem.with_suffix(".csv")
        js.write_text(json.dumps(self.to_dict(), sort_keys=True, allow_nan=False, default=_json_default) + "\n")
        rows = [e.row() for e in self.episodes]
        with open(cs, "w", newline="") as fh:
            fh.write(f"# schema_version={REPORT_SCHEMA_VERSION} seed={self.seed} "
                     f"config={json.dumps(self.config, sort_keys=True)}\n")
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        return js, cs

    @classmethod
    def load(cls, path) -> "BenchmarkReport":
        doc = json.loads(Path(path).read_text())
        if doc.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {doc.get('schema_version')!r}")
        names = {f for f in EpisodeReport.__dataclass_fields__}
        eps = [EpisodeReport(**{k: v for k, v in e.items() if k in names}) for e in doc["episodes"]]
        s = doc["summary"]
        return cls.aggregate(eps, open_loop_l2=s["open_loop_l2"], vision_acc=s["vision_acc"],
                             action_acc=s["action_acc"], config=doc["config"], seed=doc["seed"])


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _clean_nan(values: list) -> list:
    return [None if isinstance(v, float) and not math.isfinite(v) else v for v in values]


# policies ---------------------------------------------------------------------
class ClosedLoopPolicy:
    """Maps the active worlds of one tick to ego-frame trajectories ``(B, 10, 2)``."""

    def plan(self, worlds: list[World], observers: list[Observer], keys: list) -> np.ndarray:
        raise NotImplementedError


class ZeroPolicy(ClosedLoopPolicy):
    """Always predicts the degenerate all-zero trajectory (full brake)."""

    def plan(self, worlds, observers, keys):
        return np.zeros((len(worlds), N_WAYPOINTS, 2))


def route_oracle_plan(world: World, speed: float | None = None) -> np.ndarray:
    """Ideal trajectory: route centerline points spaced at ``speed`` from the ego projection."""
    speed = world.spec.cruise_speed if speed is None else speed
    line = world.route.line
    s, _, _ = line.project(world.ego.position)
    ss = np.minimum(s + speed * WAYPOINT_DT * np.arange(1, N_WAYPOINTS + 1), line.length)
    pts = np.array([line.pose_at(float(x), 0.0)[0] for x in ss])
    return world_to_ego(pts, world.ego.position, world.ego.heading)


class RouteOraclePolicy(ClosedLoopPolicy):
    """Follows the route centerline at the scenario speed limit, ignoring traffic."""

    def plan(self, worlds, observers, keys):
        return np.stack([route_oracle_plan(w) for w in worlds])


class ExpertPolicy(ClosedLoopPolicy):
    """The privileged scripted driver's plans (an upper reference for learned policies)."""

    def __init__(self):
        self._experts: dict[int, Expert] = {}

    def plan(self, worlds, observers, keys):
        out = []
        for w in worlds:
            ex = self._experts.setdefault(id(w), Expert(w))
            out.append(ex.plan()[0])
        return np.stack(out)


class ModelPolicy(ClosedLoopPolicy):
    """A trained :class:`DrivePolicy`; renders only the front view and the routed camera."""

    def __init__(self, policy: DrivePolicy, steps: int | None = None):
        self.policy = policy
        self.steps = steps

    def plan(self, worlds, observers, keys):
        c = self.policy.config
        fronts, prevs = [], []
        for obs in observers:
            f = obs.render(["front"])["front"]
            fronts.append(f)
            prevs.append(obs.advance(f))
        state = np.stack([o.state() for o in observers])
        goal = np.stack([o.goal() for o in observers])
        batch = Batch(np.stack(fronts), np.stack(prevs), None, state, goal)

        def fetch(chosen):
            return np.stack([o.render([VIEWS[v]])[VIEWS[v]] for o, v in zip(observers, chosen)])

        x0, gumbel = [], []
        for key in keys:
            r = np.random.default_rng(key)
            x0.append(r.standard_normal((N_WAYPOINTS, 2)))
            gumbel.append(r.gumbel(size=c.n_experts))
        traj, _ = self.policy.predict(batch, steps=self.steps, noise=(np.stack(x0), np.stack(gumbel)),
                                      fetch_views=fetch if c.dynamic_view else None)
        return traj


# closed loop ------------------------------------------------------------------
def _route_key(seed: int, route: tuple) -> list[int]:
    sid, s, var = route
    return [seed, ALL_SCENARIOS.index(sid) if sid in ALL_SCENARIOS else 999, s, var]


def _rollout(policy: ClosedLoopPolicy, routes: list, seed: int) -> list[EpisodeReport]:
    """Run one chunk of routes in lockstep."""
    out: dict[int, EpisodeReport] = {}
    worlds = {i: World(make_spec(sid, s, var)) for i, (sid, s, var) in enumerate(routes)}
    observers = {i: Observer(w) for i, w in worlds.items()}
    ctrl = {i: ControllerState() for i in worlds}
    tick = 0
    while worlds:
        ids = sorted(worlds)
        keys = [_route_key(seed, routes[i]) + [tick] for i in ids]
        try:
            plans = dict(zip(ids, policy.plan([worlds[i] for i in ids], [observers[i] for i in ids], keys)))
        except Exception:
            plans = {}
            for i, k in zip(ids, keys):
                try:
                    plans[i] = policy.plan([worlds[i]], [observers[i]], [k])[0]
                except Exception as exc:  # policy failure ends only this episode
                    out[i] = EpisodeReport.from_world(worlds.pop(i), routes[i][2], f"{type(exc).__name__}: {exc}")
        for i, traj in plans.items():
            w = worlds[i]
            try:
                control, ctrl[i] = compute_controls(w.ego.velocity, traj, ctrl[i], w.dt)
            except ValueError as exc:
                out[i] = EpisodeReport.from_world(worlds.pop(i), routes[i][2], f"ValueError: {exc}")
                continue
            w.step(control)
            if w.done:
                out[i] = EpisodeReport.from_world(worlds.pop(i), routes[i][2])
        tick += 1
    return [out[i] for i in range(len(routes))]


def _rollout_job(args):
    return _rollout(*args)


def run_closed_loop(policy: ClosedLoopPolicy, routes, seed: int = 0, n_jobs: int = 1, max_batch: int = 16,
                    config: dict | None = None, jerk_limit: float = JERK_LIMIT,
                    lat_limit: float = LAT_ACCEL_LIMIT) -> BenchmarkReport:
    """Roll out every route and aggregate; identical inputs give identical reports for any ``n_jobs``."""
    routes = [tuple(r) for r in routes]
    chunks = [(policy, routes[lo:lo + max_batch], seed) for lo in range(0, len(routes), max_batch)]
    if n_jobs > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(min(n_jobs, len(chunks))) as pool:
            results = list(pool.map(_rollout_job, chunks))
    else:
        results = [_rollout_job(c) for c in chunks]
    episodes = [e for r in results for e in r]
    for e in episodes:
        e.traffic_speeds = _clean_nan(e.traffic_speeds)
        e.jerk_limit, e.lat_limit = jerk_limit, lat_limit
    return BenchmarkReport.aggregate(episodes, config=config or {}, seed=seed)


# open loop --------------------------------------------------------------------
def router_accuracy(policy: DrivePolicy, ds: Dataset, idx=None, batch_size: int = 128) -> tuple:
    """Top-1 agreement of the vision and action routers with the frame labels."""
    if not ds.labeled:
        raise ValueError("router accuracy needs labeled frames")
    idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
    vis, act = [], []
    for lo in range(0, idx.size, batch_size):
        v, a = policy.route(ds.batch(idx[lo:lo + batch_size]))
        if v is not None:
            vis.append(v)
        if a is not None:
            act.append(a)
    v_acc = float(np.mean(np.concatenate(vis) == ds.view_label[idx])) if vis else None
    a_acc = float(np.mean(np.concatenate(act) == ds.skill_label[idx])) if act else None
    return v_acc, a_acc


def evaluate_open_loop(policy: DrivePolicy, ds: Dataset, idx=None, seed: int = 0, batch_size: int = 128) -> dict:
    """Average L2 of sampled trajectories against the demonstrations, plus router accuracies."""
    idx = np.arange(len(ds)) if idx is None else np.asarray(idx)
    total = 0.0
    for lo in range(0, idx.size, batch_size):
        sub = idx[lo:lo + batch_size]
        keys = [[seed, 314159, int(i)] for i in sub]
        rs = [np.random.default_rng(k) for k in keys]
        noise = (np.stack([r.standard_normal((N_WAYPOINTS, 2)) for r in rs]),
                 np.stack([r.gumbel(size=policy.config.n_experts) for r in rs]))
        batch = ds.batch(sub)
        pred, _ = policy.predict(batch, noise=noise)
        total += open_loop_l2(pred, batch.traj) * len(sub)
    out = {"open_loop_l2": total / idx.size, "n_frames": int(idx.size)}
    if ds.labeled:
        out["vision_acc"], out["action_acc"] = router_accuracy(policy, ds, idx, batch_size)
    return out
