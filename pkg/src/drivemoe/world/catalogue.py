"""Skill-to-scenario table (five skills, 44 scenario names, row order matters)."""

from __future__ import annotations

SKILLS = ("Merging", "Overtaking", "EmergencyBrake", "GiveWay", "TrafficSign")

SKILL_SCENARIOS: dict[str, tuple[str, ...]] = {
    "Merging": (
        "CrossingBicycleFlow", "EnterActorFlow", "HighwayExit", "InterurbanActorFlow", "HighwayCutIn",
        "InterurbanAdvancedActorFlow", "MergerIntoSlowTrafficV2", "MergeIntoSlowTraffic",
        "NonSignalizedJunctionLeftTurn", "NonSignalizedJunctionRightTurn",
        "NonSignalizedJunctionLeftTurnEnterFlow", "ParkingExit", "LaneChange",
        "SignalizedJunctionLeftTurn", "SignalizedJunctionRightTurn", "SignalizedJunctionLeftTurnEnterFlow",
    ),
    "Overtaking": (
        "Accident", "AccidentTwoWays", "ConstructionObstacle", "ConstructionObstacleTwoWays",
        "HazardAtSideLaneTwoWays", "HazardAtSideLane", "ParkedObstacleTwoWays", "ParkedObstacle",
        "VehicleOpenDoorTwoWays",
    ),
    "EmergencyBrake": (
        "BlockedIntersection", "DynamicObjectCrossing", "HardBreakRoute", "OppositeVehicleTakingPriority",
        "OppositeVehicleRunningRedLight", "ParkingCutIn", "PedestrianCrossing", "ParkingCrossingPedestrian",
        "StaticCutIn", "VehicleTurningRoute", "VehicleTurningRoutePedestrian", "ControlLoss",
    ),
    "GiveWay": ("InvadingTurn", "YieldToEmergencyVehicle"),
    "TrafficSign": (
        "EnterActorFlow", "CrossingBicycleFlow", "NonSignalizedJunctionLeftTurn",
        "NonSignalizedJunctionRightTurn", "NonSignalizedJunctionLeftTurnEnterFlow",
        "OppositeVehicleTakingPriority", "OppositeVehicleRunningRedLight", "PedestrianCrossing",
        "SignalizedJunctionLeftTurn", "SignalizedJunctionRightTurn", "SignalizedJunctionLeftTurnEnterFlow",
        "TJunction", "VanillaNonSignalizedTurn", "VanillaSignalizedTurnEncounterGreenLight",
        "VanillaSignalizedTurnEncounterRedLight", "VanillaNonSignalizedTurnEncounterStopsign",
        "VehicleTurningRoute", "VehicleTurningRoutePedestrian",
    ),
}

ALL_SCENARIOS: tuple[str, ...] = tuple(
    dict.fromkeys(name for skill in SKILLS for name in SKILL_SCENARIOS[skill])
)

PARKING_EXIT = "ParkingExit"

# empty routes for controller and metric calibration; not part of any skill
CALIBRATION_SCENARIOS: tuple[str, ...] = ("StraightRoute",)
KNOWN_SCENARIOS: tuple[str, ...] = ALL_SCENARIOS + CALIBRATION_SCENARIOS


def skills_of(scenario_id: str) -> list[str]:
    """Every skill row listing ``scenario_id``, in row order."""
    return [s for s in SKILLS if scenario_id in SKILL_SCENARIOS[s]]


def primary_skill(scenario_id: str) -> str:
    """First skill row containing the scenario."""
    rows = skills_of(scenario_id)
    if not rows:
        raise KeyError(f"unknown scenario_id {scenario_id!r}")
    return rows[0]
