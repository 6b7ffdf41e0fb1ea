"""Camera view identifiers and their yaw sectors in the ego frame."""

from __future__ import annotations

import math

VIEWS = ("front", "front_left", "front_right", "back", "back_left", "back_right")
N_VIEWS = len(VIEWS)
VIEW_INDEX = {v: i for i, v in enumerate(VIEWS)}
VIEW_YAW = {
    "front": 0.0,
    "front_left": math.pi / 3,
    "front_right": -math.pi / 3,
    "back": math.pi,
    "back_left": 2 * math.pi / 3,
    "back_right": -2 * math.pi / 3,
}
HALF_FOV = math.pi / 6
_TOL = 1e-12


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def view_of_bearing(bearing: float) -> int:
    """Index of the view whose sector contains ``bearing``; boundary ties go to the lower index."""
    for i, v in enumerate(VIEWS):
        if abs(_wrap(bearing - VIEW_YAW[v])) <= HALF_FOV + _TOL:
            return i
    raise AssertionError("sectors cover the circle")  # pragma: no cover


def view_of_point(x: float, y: float) -> int:
    return view_of_bearing(math.atan2(y, x))
