"""Four-way intersection world geometry.

One 3.5 m lane per direction, right-hand traffic, intersection box at the
origin. The ego route is the unprotected left turn approaching from the
north; surrounding agents approach from any arm with one of three
intentions. All routes are polylines (straights plus sampled circular arcs)
so the Frenet machinery stays exact.

The geometry is written to bundled waypoint files once and loaded from
there, so the world is fixed and versioned with the package.
"""

from __future__ import annotations

import functools
import os
from importlib import resources

import numpy as np

from .frenet import ReferencePath

MAP_VERSION = "v2"
LANE_WIDTH = 3.5
HALF_ROAD = 3.5                 # road half-width (two lanes)
LANE_OFFSET = 1.75              # lane center offset from road axis
SHOULDER = 0.4                  # paved margin beyond the lanes
CORNER_FILLET = 2.8             # drivable pocket radius at the four corners
MAP_EXTENT = 30.0
APPROACH_FROM_CENTER = 26.0     # agent route endpoints measured from center
EGO_APPROACH = 8.0              # ego spawn distance before the intersection box
EGO_EXIT = 6.0
ARC_STEP = 0.25
LEFT_TURN_RADIUS = HALF_ROAD + LANE_OFFSET      # 5.25 m
RIGHT_TURN_RADIUS = HALF_ROAD - LANE_OFFSET     # 1.75 m

APPROACHES = ("N", "E", "S", "W")
INTENTIONS = ("straight", "turn_left", "turn_right")

_ROT_STEPS = {"N": 0, "E": 1, "S": 2, "W": 3}


def _rotate_cw(points: np.ndarray, k: int) -> np.ndarray:
    """Rotate points about the origin by k * 90 degrees clockwise."""
    p = np.asarray(points, dtype=float)
    for _ in range(k % 4):
        p = np.stack([p[..., 1], -p[..., 0]], axis=-1)
    return p


def _arc(center, radius, a0, a1) -> np.ndarray:
    n = max(int(abs(a1 - a0) * radius / ARC_STEP), 4)
    ang = np.linspace(a0, a1, n + 1)
    return np.stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)], axis=1)


def _line(p0, p1, step=2.0) -> np.ndarray:
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    n = max(int(np.hypot(*(p1 - p0)) / step), 1)
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    return p0[None] + t * (p1 - p0)[None]


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(points)):
        if np.hypot(*(points[i] - points[keep[-1]])) > 1e-9:
            keep.append(i)
    return points[keep]


def _north_route(intention: str, approach_len: float, exit_len: float) -> np.ndarray:
    """Route for the N approach (southbound at x = -1.75), before rotation."""
    start = np.array([-LANE_OFFSET, HALF_ROAD + approach_len])
    entry = np.array([-LANE_OFFSET, HALF_ROAD])
    if intention == "straight":
        end = np.array([-LANE_OFFSET, -(HALF_ROAD + exit_len)])
        pts = np.concatenate([_line(start, entry), _line(entry, end)])
    elif intention == "turn_left":
        center = np.array([HALF_ROAD, HALF_ROAD])
        arc = _arc(center, LEFT_TURN_RADIUS, np.pi, 1.5 * np.pi)
        exit_end = np.array([HALF_ROAD + exit_len, -LANE_OFFSET])
        pts = np.concatenate([_line(start, entry), arc, _line(arc[-1], exit_end)])
    elif intention == "turn_right":
        center = np.array([-HALF_ROAD, HALF_ROAD])
        arc = _arc(center, RIGHT_TURN_RADIUS, 0.0, -0.5 * np.pi)
        exit_end = np.array([-(HALF_ROAD + exit_len), LANE_OFFSET])
        pts = np.concatenate([_line(start, entry), arc, _line(arc[-1], exit_end)])
    else:
        raise ValueError(f"unknown intention {intention!r}")
    return _dedupe(pts)


def route_waypoints(approach: str, intention: str,
                    approach_len: float | None = None,
                    exit_len: float | None = None) -> np.ndarray:
    if approach not in _ROT_STEPS:
        raise ValueError(f"unknown approach {approach!r}")
    a = APPROACH_FROM_CENTER - HALF_ROAD if approach_len is None else approach_len
    e = APPROACH_FROM_CENTER - HALF_ROAD if exit_len is None else exit_len
    pts = _north_route(intention, a, e)
    return _rotate_cw(pts, _ROT_STEPS[approach])


def ego_route_waypoints() -> np.ndarray:
    return route_waypoints("N", "turn_left", approach_len=EGO_APPROACH, exit_len=EGO_EXIT)


def is_drivable(points) -> np.ndarray:
    """True where points lie on the paved surface.

    Cross-shaped roadway (lanes plus shoulder) with rounded pockets at the
    four intersection corners, so hard stops near the inside of the turn
    end on pavement rather than on the corner curb.
    """
    p = np.asarray(points, dtype=float)
    x = np.abs(p[..., 0])
    y = np.abs(p[..., 1])
    half = HALF_ROAD + SHOULDER
    on_road = (x <= half) | (y <= half)
    pocket = (x - HALF_ROAD) ** 2 + (y - HALF_ROAD) ** 2 <= CORNER_FILLET ** 2
    in_map = (x <= MAP_EXTENT) & (y <= MAP_EXTENT)
    return (on_road | pocket) & in_map


# -- bundled map files ---------------------------------------------------


def _route_filename(approach: str, intention: str) -> str:
    return f"route_{approach}_{intention}.txt"


def write_map_files(directory) -> None:
    """Regenerate the bundled waypoint files (development helper)."""
    os.makedirs(directory, exist_ok=True)
    for approach in APPROACHES:
        for intention in INTENTIONS:
            ReferencePath(route_waypoints(approach, intention)).write_waypoint_file(
                os.path.join(directory, _route_filename(approach, intention)))
    ReferencePath(ego_route_waypoints()).write_waypoint_file(
        os.path.join(directory, "ego_route.txt"))
    with open(os.path.join(directory, "map_meta.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"version {MAP_VERSION}\nlane_width {LANE_WIDTH}\n"
                 f"shoulder {SHOULDER}\ncorner_fillet {CORNER_FILLET}\n"
                 f"map_extent {MAP_EXTENT}\n")


def _data_path(name: str):
    return resources.files("dcplan").joinpath("data", name)


@functools.lru_cache(maxsize=None)
def agent_path(approach: str, intention: str) -> ReferencePath:
    """Bundled route for a surrounding agent, cached per (approach, intention)."""
    with resources.as_file(_data_path(_route_filename(approach, intention))) as p:
        return ReferencePath.from_waypoint_file(p)


@functools.lru_cache(maxsize=None)
def ego_path() -> ReferencePath:
    with resources.as_file(_data_path("ego_route.txt")) as p:
        return ReferencePath.from_waypoint_file(p)


def all_agent_paths() -> dict:
    return {(a, i): agent_path(a, i) for a in APPROACHES for i in INTENTIONS}
