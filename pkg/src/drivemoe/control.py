"""PID trajectory follower: speed from the 7th waypoint, steering from the 10th."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WAYPOINT_DT = 0.2
SPEED_GAINS = (5.0, 0.5, 1.0)
TURN_GAINS = (1.25, 0.75, 0.3)
INTEGRAL_LIMIT = 10.0
# tighter bound for steering: a wound-up heading integral carries a turn into the next lane
TURN_INTEGRAL_LIMIT = 0.3
# below this distance the heading to the 10th waypoint is ill-conditioned
MIN_STEER_DISTANCE = 0.5


@dataclass
class PidState:
    gains: tuple[float, float, float]
    integral: float = 0.0
    previous_error: float = 0.0
    limit: float = INTEGRAL_LIMIT
    started: bool = False


def pid_step(state: PidState, error: float, dt: float) -> tuple[float, PidState]:
    """One PID update; returns the correction and the new state.

    The derivative term is zero on the very first call (no previous error).
    """
    if not math.isfinite(error):
        raise ValueError(f"non-finite error {error!r}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    kp, ki, kd = state.gains
    integral = min(max(state.integral + error * dt, -state.limit), state.limit)
    deriv = (error - state.previous_error) / dt if state.started else 0.0
    out = kp * error + ki * integral + kd * deriv
    return out, PidState(state.gains, integral, error, state.limit, True)


@dataclass
class ControllerState:
    speed: PidState = field(default_factory=lambda: PidState(SPEED_GAINS))
    turn: PidState = field(default_factory=lambda: PidState(TURN_GAINS, limit=TURN_INTEGRAL_LIMIT))


def desired_speed(traj: np.ndarray) -> float:
    """Distance to the 7th waypoint over its time stamp."""
    return float(np.hypot(*traj[6])) / (7 * WAYPOINT_DT)


def heading_error(traj: np.ndarray) -> float:
    x, y = traj[9]
    if math.hypot(x, y) < MIN_STEER_DISTANCE:
        return 0.0
    return math.atan2(y, x)


def compute_controls(current_speed: float, traj, state: ControllerState, dt: float = 0.1):
    """Map a 10x2 ego-frame trajectory to ``(throttle, brake, steer)`` and the new PID state."""
    traj = np.asarray(traj, dtype=np.float64).reshape(10, 2)
    if not np.isfinite(traj).all():
        raise ValueError("non-finite trajectory")
    if not np.any(traj):
        return (0.0, 1.0, 0.0), ControllerState()
    corr, speed_state = pid_step(state.speed, desired_speed(traj) - current_speed, dt)
    throttle = min(max(corr, 0.0), 1.0)
    brake = min(max(-corr, 0.0), 1.0)
    steer_raw, turn_state = pid_step(state.turn, heading_error(traj), dt)
    steer = min(max(steer_raw, -1.0), 1.0)
    return (throttle, brake, steer), ControllerState(speed_state, turn_state)
