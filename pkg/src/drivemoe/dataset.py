"""Demonstration frames: observation building, expert rollouts, annotation, storage.

A dataset is one frame container (see :mod:`drivemoe.world.logs`). Rasters are
kept as uint8; the per-frame annotator context is stored alongside so labels
can be (re)computed by :func:`annotate_dataset` without re-simulating.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .annotator import FrameContext, annotate_camera_index, annotate_skill_index
from .backbone import ego_state_features
from .model import Batch
from .world.expert import Expert
from .world.logs import read_container, write_container
from .world.render import from_uint8, render_views, to_uint8
from .world.route import LOOKAHEAD, OffRouteError
from .world.scenarios import make_spec
from .world.sim import World
from .world.views import N_VIEWS, VIEWS

DATASET_VERSION = 1
UNLABELED = -1


class Observer:
    """Builds model inputs from a world; remembers the previous front raster."""

    def __init__(self, world: World):
        self.world = world
        self.prev_front: np.ndarray | None = None
        self.last_goal = np.zeros(7)
        self.last_goal[2] = 1.0  # "follow"

    def goal(self) -> np.ndarray:
        try:
            self.last_goal = self.world.goal().encode(LOOKAHEAD)
        except OffRouteError:
            pass
        return self.last_goal

    def state(self) -> np.ndarray:
        return ego_state_features(self.world.ego)

    def render(self, views=None) -> dict[str, np.ndarray]:
        return render_views(self.world, views=views)

    def advance(self, front: np.ndarray) -> np.ndarray:
        """Return the previous front raster (the current one at the first step) and store ``front``."""
        prev = front if self.prev_front is None else self.prev_front
        self.prev_front = front
        return prev


@dataclass
class EpisodeFrames:
    scenario_id: str
    seed: int
    variant: int
    views: list = field(default_factory=list)  # (6, C, S, S) uint8 per frame
    front_prev: list = field(default_factory=list)
    state: list = field(default_factory=list)
    goal: list = field(default_factory=list)
    traj: list = field(default_factory=list)
    contexts: list = field(default_factory=list)
    success: bool = False
    steps: int = 0


def rollout_expert(scenario_id: str, seed: int, variant: int = 0, stride: int = 2, perturb: float = 0.3,
                   max_steps: int | None = None) -> EpisodeFrames:
    """Drive one episode with the scripted expert and record every ``stride``-th frame.

    With probability ``perturb`` per second a short steering/brake disturbance is
    executed instead of the expert control; the recorded label stays the expert
    plan, so the data shows how to recover.
    """
    spec = make_spec(scenario_id, seed, variant)
    world = World(spec)
    expert = Expert(world)
    obs = Observer(world)
    rng = np.random.default_rng([seed, variant, 7919])
    out = EpisodeFrames(scenario_id, seed, variant)
    disturb_left, disturb = 0, (0.0, 0.0)
    while not world.done and (max_steps is None or world.steps < max_steps):
        plan, control, ctx = expert.act()
        rasters = obs.render()
        front = to_uint8(rasters["front"])
        prev = obs.advance(front)
        if world.steps % stride == 0:
            out.views.append(np.stack([to_uint8(rasters[v]) for v in VIEWS]))
            out.front_prev.append(prev)
            out.state.append(obs.state())
            out.goal.append(obs.goal())
            out.traj.append(plan)
            out.contexts.append(ctx.to_dict())
        if disturb_left == 0 and rng.random() < perturb * world.dt and world.ego.velocity > 1.0:
            disturb_left = int(rng.integers(3, 8))
            disturb = (float(rng.uniform(-0.35, 0.35)), float(rng.uniform(0.0, 0.3)))
        if disturb_left > 0:
            disturb_left -= 1
            thr, brk, steer = control
            control = (thr, min(1.0, brk + disturb[1]), max(-1.0, min(1.0, steer + disturb[0])))
        world.step(control)
    out.success = world.episode_success()
    out.steps = world.steps
    return out


def _rollout_args(args):
    return rollout_expert(*args)


@dataclass
class Dataset:
    views: np.ndarray  # (N, 6, C, S, S) uint8
    front_prev: np.ndarray  # (N, C, S, S) uint8
    state: np.ndarray  # (N, F)
    goal: np.ndarray  # (N, 7)
    traj: np.ndarray  # (N, 10, 2)
    episode: np.ndarray  # (N,) episode index
    contexts: list[dict]
    episodes: list[dict]  # scenario_id, seed, variant, success, steps
    view_label: np.ndarray | None = None
    skill_label: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.views.shape[0]

    @property
    def labeled(self) -> bool:
        return self.view_label is not None and bool((self.view_label >= 0).all()) \
            and self.skill_label is not None and bool((self.skill_label >= 0).all())

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx)
        views = from_uint8(self.views[idx])
        return Batch(views[:, 0], from_uint8(self.front_prev[idx]), views, self.state[idx], self.goal[idx],
                     self.traj[idx],
                     None if self.view_label is None else self.view_label[idx],
                     None if self.skill_label is None else self.skill_label[idx])

    def split(self, val_fraction: float = 0.05, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Frame indices for train/validation, split by episode seed."""
        seeds = sorted({e["seed"] for e in self.episodes})
        rng = np.random.default_rng(seed)
        n_val = max(1, int(round(val_fraction * len(seeds)))) if len(seeds) > 1 else 0
        val_seeds = set(rng.choice(seeds, size=n_val, replace=False).tolist()) if n_val else set()
        ep_val = np.array([e["seed"] in val_seeds for e in self.episodes], dtype=bool)
        mask = ep_val[self.episode] if len(self.episodes) else np.zeros(len(self), bool)
        return np.nonzero(~mask)[0], np.nonzero(mask)[0]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return Dataset(self.views[idx], self.front_prev[idx], self.state[idx], self.goal[idx], self.traj[idx],
                       self.episode[idx], [self.contexts[i] for i in idx], self.episodes,
                       pick(self.view_label), pick(self.skill_label), dict(self.meta))


def generate_dataset(jobs_list, stride: int = 2, perturb: float = 0.3, n_jobs: int = 1,
                     max_steps: int | None = None) -> Dataset:
    """Roll out ``(scenario_id, seed, variant)`` triples and pack the frames."""
    args = [(s, int(seed), int(v), stride, perturb, max_steps) for s, seed, v in jobs_list]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            episodes = list(pool.map(_rollout_args, args))
    else:
        episodes = [_rollout_args(a) for a in args]
    return pack_episodes(episodes)


def pack_episodes(episodes: list[EpisodeFrames]) -> Dataset:
    frames = [e for e in episodes if e.views]
    if not frames:
        raise ValueError("no frames recorded")
    cat = lambda name: np.concatenate([np.asarray(getattr(e, name)) for e in frames])  # noqa: E731
    episode = np.concatenate([np.full(len(e.views), i) for i, e in enumerate(frames)])
    info = [{"scenario_id": e.scenario_id, "seed": e.seed, "variant": e.variant, "success": e.success,
             "steps": e.steps} for e in frames]
    return Dataset(cat("views"), cat("front_prev"), cat("state").astype(np.float32), cat("goal").astype(np.float32),
                   cat("traj").astype(np.float32), episode, [c for e in frames for c in e.contexts], info)


def annotate_dataset(ds: Dataset, n_experts: int = 6) -> Dataset:
    """Fill the view and skill label fields from stored contexts and scenario ids."""
    ds.view_label = np.array([annotate_camera_index(FrameContext(**c)) for c in ds.contexts], dtype=np.int64)
    skill = [annotate_skill_index(e["scenario_id"], n_experts) for e in ds.episodes]
    ds.skill_label = np.asarray(skill, dtype=np.int64)[ds.episode]
    ds.meta["n_experts"] = n_experts
    return ds


def save_dataset(ds: Dataset, stem, extra: dict | None = None):
    n = len(ds)
    arrays = {"views": ds.views, "front_prev": ds.front_prev, "state": ds.state, "goal": ds.goal, "traj": ds.traj,
              "episode": ds.episode,
              "view_label": ds.view_label if ds.view_label is not None else np.full(n, UNLABELED, np.int64),
              "skill_label": ds.skill_label if ds.skill_label is not None else np.full(n, UNLABELED, np.int64)}
    meta = {"dataset_version": DATASET_VERSION, "contexts": ds.contexts, "episodes": ds.episodes,
            **ds.meta, **(extra or {})}
    return write_container(stem, arrays, meta)


def load_dataset(stem) -> Dataset:
    arrays, meta = read_container(stem)
    if meta.get("dataset_version") != DATASET_VERSION:
        raise ValueError(f"unsupported dataset version {meta.get('dataset_version')!r}")
    vl, sl = arrays["view_label"], arrays["skill_label"]
    extra = {k: v for k, v in meta.items() if k not in ("contexts", "episodes", "dataset_version")}
    return Dataset(arrays["views"], arrays["front_prev"], arrays["state"], arrays["goal"], arrays["traj"],
                   arrays["episode"], meta["contexts"], meta["episodes"],
                   None if (vl < 0).all() else vl, None if (sl < 0).all() else sl, extra)


def label_histogram(ds: Dataset) -> dict:
    out = {}
    if ds.view_label is not None:
        out["views"] = {VIEWS[i]: int((ds.view_label == i).sum()) for i in range(N_VIEWS)}
    if ds.skill_label is not None:
        out["skills"] = np.bincount(ds.skill_label, minlength=int(ds.meta.get("n_experts", 0))).tolist()
    return out

