"""Ego state and kinematic bicycle dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import wrap_angle


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.9
    max_steer: float = 0.5  # rad at steer = 1
    max_accel: float = 3.0  # m/s^2 at throttle = 1
    max_brake: float = 8.0  # m/s^2 at brake = 1
    rolling_drag: float = 0.1  # m/s^2
    air_drag: float = 0.005  # 1/m, times v^2
    # first-order lag of the longitudinal actuator; 0 applies commands instantly
    actuator_lag: float = 0.5  # s
    length: float = 4.6
    width: float = 1.9

    def drag(self, v: float) -> float:
        if v <= 0.0:
            return 0.0
        return self.rolling_drag + self.air_drag * v * v


@dataclass(frozen=True)
class Kinematics:
    x: float
    y: float
    velocity: float
    acceleration: float
    heading: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.velocity, self.acceleration, self.heading])


@dataclass(frozen=True)
class EgoState:
    """Current kinematics plus the previous ``history_len`` records (oldest first)."""

    x: float
    y: float
    velocity: float
    acceleration: float
    heading: float
    history: tuple[Kinematics, ...] = field(default_factory=tuple)
    actuator: float = 0.0  # lagged throttle/brake acceleration, m/s^2

    @classmethod
    def initial(cls, x: float, y: float, heading: float, velocity: float = 0.0,
                history_len: int = 4) -> "EgoState":
        heading = wrap_angle(heading)
        k = Kinematics(x, y, velocity, 0.0, heading)
        return cls(x, y, velocity, 0.0, heading, tuple([k] * history_len))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def speed(self) -> float:
        return self.velocity

    def kinematics(self) -> Kinematics:
        return Kinematics(self.x, self.y, self.velocity, self.acceleration, self.heading)

    def box(self, params: VehicleParams):
        from .geometry import Box

        return Box(self.x, self.y, self.heading, params.length, params.width)


def step_dynamics(ego: EgoState, control, dt: float, params: VehicleParams = VehicleParams()) -> EgoState:
    """Advance the ego one step under ``control = (throttle, brake, steer)``.

    Position and heading integrate the kinematic bicycle with the speed at the
    start of the step; speed never goes negative. The commanded acceleration
    ``a_max*throttle - b_max*brake`` reaches the wheels through a first-order
    lag of ``params.actuator_lag`` seconds.
    """
    throttle, brake, steer = (float(c) for c in control)
    if not all(math.isfinite(c) for c in (throttle, brake, steer)):
        raise ValueError(f"non-finite control {control!r}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    throttle = min(max(throttle, 0.0), 1.0)
    brake = min(max(brake, 0.0), 1.0)
    steer = min(max(steer, -1.0), 1.0)

    v = ego.velocity
    delta = steer * params.max_steer
    yaw_rate = v * math.tan(delta) / params.wheelbase
    x = ego.x + v * math.cos(ego.heading) * dt
    y = ego.y + v * math.sin(ego.heading) * dt
    heading = wrap_angle(ego.heading + yaw_rate * dt)
    command = params.max_accel * throttle - params.max_brake * brake
    if params.actuator_lag > 0:
        actuator = ego.actuator + min(dt / params.actuator_lag, 1.0) * (command - ego.actuator)
    else:
        actuator = command
    v_new = max(0.0, v + (actuator - params.drag(v)) * dt)
    if v_new == 0.0:
        actuator = max(actuator, 0.0)  # brakes hold, they do not push backward
    realized = (v_new - v) / dt
    hist = ego.history[1:] + (ego.kinematics(),) if ego.history else ()
    return EgoState(x, y, v_new, realized, heading, hist, actuator)


def with_history_len(ego: EgoState, n: int) -> EgoState:
    k = ego.kinematics()
    return replace(ego, history=tuple([k] * n))
