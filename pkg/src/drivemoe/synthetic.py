"""Synthetic frame sets with known routing structure.

``routing_set``: the goal command fixes the labeled camera; the skill is drawn
independently and painted only into the labeled camera (other cameras carry
decoy skill marks), and the trajectory depends on the skill. A router that
picks the wrong camera therefore hands the planner misleading evidence.

``bimodal_set``: one fixed observation, two mirrored turn trajectories with
distinct skill labels.
"""

from __future__ import annotations

import numpy as np

from .dataset import Dataset
from .world.route import COMMANDS, GoalWaypoint
from .world.views import N_VIEWS, VIEW_INDEX

COMMAND_VIEW = {"follow": "back", "turn_left": "front_left", "turn_right": "front_right",
                "change_left": "back_left", "change_right": "back_right"}
WAYPOINT_T = 0.2 * np.arange(1, 11)


def skill_template(skill: int) -> np.ndarray:
    """Distinct 10x2 trajectory per skill: speed from ``skill % 3``, curvature sign from ``skill // 3``."""
    speed = (4.0, 6.0, 8.0)[skill % 3]
    x = speed * WAYPOINT_T
    bend = (-1.0, 1.0)[skill // 3 % 2] * (0.02 + 0.01 * (skill % 3))
    return np.stack([x, bend * x * x], axis=1)


def _mark(grid: int, channels: int, skill: int, patch: int) -> np.ndarray:
    """A solid block in the patch and channel encoding ``skill``."""
    n = grid // patch
    img = np.zeros((channels, grid, grid))
    cell = skill % (n * n)
    r, c = divmod(cell, n)
    ch = 2 + (skill // (n * n)) % (channels - 2)
    img[ch, r * patch:(r + 1) * patch, c * patch:(c + 1) * patch] = 1.0
    return img


def _pack(views, prev, state, goal, traj, view_label, skill_label, group) -> Dataset:
    u8 = lambda a: np.round(np.clip(a, 0, 1) * 255).astype(np.uint8)  # noqa: E731
    n = len(traj)
    episodes = [{"scenario_id": "synthetic", "seed": int(g), "variant": 0, "success": True, "steps": 0}
                for g in range(int(group.max()) + 1)]
    return Dataset(u8(views), u8(prev), state.astype(np.float32), goal.astype(np.float32), traj.astype(np.float32),
                   group.astype(np.int64), [{} for _ in range(n)], episodes,
                   view_label.astype(np.int64), skill_label.astype(np.int64), {"synthetic": True})


def routing_set(n: int, seed: int, grid: int = 16, channels: int = 5, patch: int = 8, n_skills: int = 6,
                history: int = 4, groups: int = 40) -> Dataset:
    rng = np.random.default_rng([seed, 31337])
    cmds = rng.integers(0, len(COMMANDS), n)
    skills = rng.integers(0, n_skills, n)
    views = rng.random((n, N_VIEWS, channels, grid, grid)) * 0.3
    views[:, :, :2] = 0.0
    view_label = np.array([VIEW_INDEX[COMMAND_VIEW[COMMANDS[c]]] for c in cmds])
    for i in range(n):
        for v in range(N_VIEWS):
            s = skills[i] if v == view_label[i] else rng.integers(0, n_skills)
            views[i, v] = np.maximum(views[i, v], _mark(grid, channels, int(s), patch))
    prev = views[:, 0] * 0.9
    goal = np.stack([GoalWaypoint(*rng.uniform(-10, 10, 2), COMMANDS[c]).encode(20.0) for c in cmds])
    state = rng.standard_normal((n, (history + 1) * 5)) * 0.1
    traj = np.stack([skill_template(int(s)) for s in skills]) + rng.standard_normal((n, 10, 2)) * 0.05
    return _pack(views, prev, state, goal, traj, view_label, skills, np.arange(n) % groups)


def bimodal_set(n: int, seed: int, grid: int = 16, channels: int = 5, history: int = 4,
                curvature: float = 0.04, speed: float = 6.0) -> tuple[Dataset, np.ndarray]:
    """Identical observations; half the frames turn left, half right. Returns the set and both modes."""
    rng = np.random.default_rng([seed, 4242])
    base = rng.random((N_VIEWS, channels, grid, grid)) * 0.5
    x = speed * WAYPOINT_T
    modes = np.stack([np.stack([x, curvature * x * x], 1), np.stack([x, -curvature * x * x], 1)])
    skills = np.arange(n) % 2
    views = np.broadcast_to(base, (n,) + base.shape).copy()
    goal = np.tile(GoalWaypoint(20.0, 0.0, "follow").encode(20.0), (n, 1))
    state = np.zeros((n, (history + 1) * 5))
    traj = modes[skills]
    ds = _pack(views, views[:, 0].copy(), state, goal, traj, np.zeros(n), skills, np.arange(n) % 20)
    return ds, modes


def nearest_mode_distance(samples: np.ndarray, modes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per sample: mean waypoint distance to the closest mode, and that mode's index."""
    d = np.linalg.norm(samples[:, None] - modes[None], axis=-1).mean(axis=-1)
    return d.min(axis=1), d.argmin(axis=1)
