"""Camera-view and skill labels for router supervision."""

from __future__ import annotations

from dataclasses import dataclass

from .world.catalogue import ALL_SCENARIOS, PARKING_EXIT, SKILLS, primary_skill
from .world.views import VIEW_INDEX, VIEWS

OBSTACLE_TRIGGER_M = 25.0
SKILL_LABELS_6 = SKILLS + (PARKING_EXIT,)
CHANGE_COMMANDS = ("change_left", "change_right")


@dataclass(frozen=True)
class FrameContext:
    is_in_junction: bool = False
    command: str = "follow"
    obstacle_ahead_m: float | None = None
    target_lane_side: str | None = None
    target_lane_opposing: bool = False
    merging_side: str | None = None
    emergency_vehicle_bearing: str | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _side(value: str | None) -> str | None:
    if value not in (None, "left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {value!r}")
    return value


def camera_rule(ctx: FrameContext) -> tuple[str, str]:
    """The view label and the name of the rule that produced it."""
    if ctx.emergency_vehicle_bearing is not None:
        if ctx.emergency_vehicle_bearing not in VIEW_INDEX:
            raise ValueError(f"unknown view {ctx.emergency_vehicle_bearing!r}")
        return ctx.emergency_vehicle_bearing, "emergency"
    if ctx.is_in_junction and ctx.command in ("turn_left", "turn_right"):
        return ("front_left" if ctx.command == "turn_left" else "front_right"), "junction_turn"
    side = _side(ctx.target_lane_side)
    if ctx.command in CHANGE_COMMANDS and side is None:
        side = "left" if ctx.command == "change_left" else "right"
    near_obstacle = ctx.obstacle_ahead_m is not None and ctx.obstacle_ahead_m <= OBSTACLE_TRIGGER_M
    if side is not None and (ctx.command in CHANGE_COMMANDS or near_obstacle or ctx.target_lane_side is not None):
        if ctx.target_lane_opposing:
            return f"front_{side}", "lane_change_opposing"
        return f"back_{side}", "lane_change"
    merge = _side(ctx.merging_side)
    if merge is not None:
        return f"front_{merge}", "merging"
    return "back", "default"


def annotate_camera(ctx: FrameContext) -> str:
    return camera_rule(ctx)[0]


def annotate_camera_index(ctx: FrameContext) -> int:
    return VIEWS.index(annotate_camera(ctx))


def skill_labels(n_experts: int = 5) -> tuple[str, ...]:
    """Label set: five skills, plus ParkingExit once six or more experts are configured."""
    return SKILL_LABELS_6 if n_experts >= 6 else SKILLS


def annotate_skill(scenario_id: str, n_experts: int = 5) -> str:
    """Skill label; ParkingExit gets its own label when six experts are configured."""
    if scenario_id not in ALL_SCENARIOS:
        raise KeyError(f"unknown scenario_id {scenario_id!r}")
    if n_experts >= 6 and scenario_id == PARKING_EXIT:
        return PARKING_EXIT
    return primary_skill(scenario_id)


def annotate_skill_index(scenario_id: str, n_experts: int = 5) -> int:
    return skill_labels(n_experts).index(annotate_skill(scenario_id, n_experts))
