"""Deterministic 2D driving world: scenarios, dynamics, rasters, routing and infractions."""

from .catalogue import ALL_SCENARIOS, CALIBRATION_SCENARIOS, KNOWN_SCENARIOS, PARKING_EXIT, SKILL_SCENARIOS, SKILLS, primary_skill, skills_of
from .dynamics import EgoState, VehicleParams, step_dynamics
from .geometry import Box, Polyline, boxes_intersect, ego_to_world, world_to_ego, wrap_angle
from .infractions import PENALTY, Infraction, detect_infractions
from .render import CHANNELS, GRID, RANGE, render_views
from .route import COMMANDS, GoalWaypoint, OffRouteError, Route, next_goal_waypoint
from .scenarios import ScenarioSpec, make_spec
from .sim import DT, World
from .views import N_VIEWS, VIEWS, view_of_bearing


def spawn_scenario(spec: ScenarioSpec, **kwargs) -> World:
    """Fresh world state for ``spec``; raises ``KeyError`` for unknown scenario ids."""
    return World(spec, **kwargs)


__all__ = [
    "ALL_SCENARIOS", "CALIBRATION_SCENARIOS", "KNOWN_SCENARIOS", "PARKING_EXIT", "SKILL_SCENARIOS", "SKILLS", "primary_skill", "skills_of",
    "EgoState", "VehicleParams", "step_dynamics", "Box", "Polyline", "boxes_intersect", "ego_to_world",
    "world_to_ego", "wrap_angle", "PENALTY", "Infraction", "detect_infractions", "CHANNELS", "GRID", "RANGE",
    "render_views", "COMMANDS", "GoalWaypoint", "OffRouteError", "Route", "next_goal_waypoint",
    "ScenarioSpec", "make_spec", "DT", "World", "N_VIEWS", "VIEWS", "view_of_bearing", "spawn_scenario",
]
