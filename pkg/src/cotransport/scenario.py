"""Maps, task modes, embodiments, and occupancy-grid rasterization.

A Scenario is the static description of one transport task: wall segments,
the carried/pushed object, start pose, goal disc, and the two agents'
kinematic limits.  Scenarios are immutable after construction and validated
eagerly so every downstream module can trust the invariants.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

SCENARIO_SCHEMA = "scenario_v1"

Vec2 = tuple[float, float]
# wall segment as (x0, y0, x1, y1), meters, world frame
Segment = tuple[float, float, float, float]


class ScenarioError(ValueError):
    """Raised when a scenario file or construction violates an invariant."""


@dataclass(frozen=True)
class Embodiment:
    """Per-agent kinematic limits for the tracking proxy."""

    max_vx: float           # m/s, body frame forward
    max_vy: float           # m/s, body frame lateral
    max_yaw_rate: float     # rad/s
    com_height_min: float   # m
    com_height_max: float   # m
    com_height_default: float
    shoulder_height: float  # m, center of the wrist workspace ball
    wrist_workspace: float  # m, reach radius around the shoulder point
    body_radius: float = 0.25   # m, disc used for wall collision
    side_margin: float = 0.10   # m, extra clearance demanded by feasibility filtering
    pitch_range: float = 0.5    # rad, |torso pitch| limit

    def validate(self) -> None:
        positive = {
            "max_vx": self.max_vx,
            "max_vy": self.max_vy,
            "max_yaw_rate": self.max_yaw_rate,
            "com_height_min": self.com_height_min,
            "com_height_max": self.com_height_max,
            "shoulder_height": self.shoulder_height,
            "wrist_workspace": self.wrist_workspace,
            "body_radius": self.body_radius,
            "pitch_range": self.pitch_range,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise ScenarioError(f"embodiment limit {name} must be strictly positive, got {value}")
        if not (self.com_height_min <= self.com_height_default <= self.com_height_max):
            raise ScenarioError("com_height_default outside [com_height_min, com_height_max]")
        if self.side_margin < 0.0:
            raise ScenarioError("side_margin must be non-negative")


@dataclass(frozen=True)
class ObjectSpec:
    """Rectangular payload with grasp handles (carry) or contact stations (push)."""

    length: float               # m, major extent along object x
    width: float                # m, minor extent along object y
    handles: tuple[Vec2, Vec2]  # object-frame grasp/contact points, one per agent
    rest_height: float = 0.45   # m, CoM height when resting / in push mode
    grip_offset: float = 0.15   # m, lateral offset of each wrist attachment from its handle

    def validate(self) -> None:
        if self.length <= 0.0 or self.width <= 0.0:
            raise ScenarioError("object extents must be strictly positive")
        if len(self.handles) != 2:
            raise ScenarioError("object_spec needs exactly 2 handle points")
        if self.rest_height <= 0.0:
            raise ScenarioError("rest_height must be strictly positive")

    @property
    def minor_extent(self) -> float:
        return min(self.length, self.width)

    def corners_local(self) -> tuple[Vec2, Vec2, Vec2, Vec2]:
        hx, hy = self.length / 2.0, self.width / 2.0
        return ((hx, hy), (-hx, hy), (-hx, -hy), (hx, -hy))


@dataclass(frozen=True)
class Scenario:
    """One transport task: geometry, mode, start/goal, embodiments, horizon."""

    id: str
    task_mode: str                       # "push" | "carry"
    walls: tuple[Segment, ...]
    object_spec: ObjectSpec
    start_pose: tuple[float, float, float]   # (x, y, heading)
    goal_center: Vec2
    goal_radius: float
    embodiments: tuple[Embodiment, Embodiment]
    episode_horizon: int                 # policy steps
    category: str = "custom"             # OSP | SCT | SLH | custom

    def __post_init__(self) -> None:
        validate_scenario(self)

    def object_corners_at(self, pose: tuple[float, float, float]) -> list[Vec2]:
        x, y, th = pose
        c, s = math.cos(th), math.sin(th)
        out = []
        for lx, ly in self.object_spec.corners_local():
            out.append((x + c * lx - s * ly, y + s * lx + c * ly))
        return out

    def bounding_box(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) over walls, start footprint, and goal disc."""
        xs: list[float] = []
        ys: list[float] = []
        for x0, y0, x1, y1 in self.walls:
            xs += [x0, x1]
            ys += [y0, y1]
        for cx, cy in self.object_corners_at(self.start_pose):
            xs.append(cx)
            ys.append(cy)
        gx, gy = self.goal_center
        xs += [gx - self.goal_radius, gx + self.goal_radius]
        ys += [gy - self.goal_radius, gy + self.goal_radius]
        return (min(xs), min(ys), max(xs), max(ys))


# ---------- segment geometry ----------

def point_segment_distance(px: float, py: float, seg: Segment) -> float:
    x0, y0, x1, y1 = seg
    dx, dy = x1 - x0, y1 - y0
    L2 = dx * dx + dy * dy
    if L2 <= 0.0:
        return math.hypot(px - x0, py - y0)
    t = ((px - x0) * dx + (py - y0) * dy) / L2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (x0 + t * dx), py - (y0 + t * dy))


def _orient(ax: float, ay: float, bx: float, by: float, cx: float, cy: float) -> float:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def segments_intersect(a: Segment, b: Segment) -> bool:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    d1 = _orient(bx0, by0, bx1, by1, ax0, ay0)
    d2 = _orient(bx0, by0, bx1, by1, ax1, ay1)
    d3 = _orient(ax0, ay0, ax1, ay1, bx0, by0)
    d4 = _orient(ax0, ay0, ax1, ay1, bx1, by1)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True

    def on(sx0: float, sy0: float, sx1: float, sy1: float, px: float, py: float) -> bool:
        return (min(sx0, sx1) - 1e-12 <= px <= max(sx0, sx1) + 1e-12
                and min(sy0, sy1) - 1e-12 <= py <= max(sy0, sy1) + 1e-12)

    if d1 == 0 and on(bx0, by0, bx1, by1, ax0, ay0):
        return True
    if d2 == 0 and on(bx0, by0, bx1, by1, ax1, ay1):
        return True
    if d3 == 0 and on(ax0, ay0, ax1, ay1, bx0, by0):
        return True
    if d4 == 0 and on(ax0, ay0, ax1, ay1, bx1, by1):
        return True
    return False


def segment_segment_distance(a: Segment, b: Segment) -> float:
    if segments_intersect(a, b):
        return 0.0
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return min(
        point_segment_distance(ax0, ay0, b),
        point_segment_distance(ax1, ay1, b),
        point_segment_distance(bx0, by0, a),
        point_segment_distance(bx1, by1, a),
    )


def segment_rect_distance(seg: Segment, xmin: float, ymin: float, xmax: float, ymax: float) -> float:
    """Distance between a segment and an axis-aligned rectangle (0 if touching)."""
    x0, y0, x1, y1 = seg
    if xmin <= x0 <= xmax and ymin <= y0 <= ymax:
        return 0.0
    if xmin <= x1 <= xmax and ymin <= y1 <= ymax:
        return 0.0
    edges = (
        (xmin, ymin, xmax, ymin),
        (xmax, ymin, xmax, ymax),
        (xmax, ymax, xmin, ymax),
        (xmin, ymax, xmin, ymin),
    )
    return min(segment_segment_distance(seg, e) for e in edges)


def rect_intersects_walls(corners: list[Vec2], walls: tuple[Segment, ...]) -> bool:
    """True if any wall segment touches the (possibly rotated) rectangle boundary or interior."""
    n = len(corners)
    edges = [(corners[i][0], corners[i][1], corners[(i + 1) % n][0], corners[(i + 1) % n][1]) for i in range(n)]
    for w in walls:
        for e in edges:
            if segments_intersect(w, e):
                return True
        # wall fully inside the rectangle
        if _point_in_convex(w[0], w[1], corners):
            return True
    return False


def _point_in_convex(px: float, py: float, corners: list[Vec2]) -> bool:
    sign = 0.0
    n = len(corners)
    for i in range(n):
        ax, ay = corners[i]
        bx, by = corners[(i + 1) % n]
        cr = _orient(ax, ay, bx, by, px, py)
        if cr != 0.0:
            if sign == 0.0:
                sign = cr
            elif (cr > 0) != (sign > 0):
                return False
    return True


# ---------- validation ----------

def validate_scenario(sc: Scenario) -> None:
    if sc.task_mode not in ("push", "carry"):
        raise ScenarioError(f"task_mode must be push or carry, got {sc.task_mode!r}")
    if len(sc.embodiments) != 2:
        raise ScenarioError("scenario needs exactly 2 embodiments")
    for emb in sc.embodiments:
        emb.validate()
    sc.object_spec.validate()
    if sc.goal_radius <= 0.0:
        raise ScenarioError("goal_radius must be strictly positive")
    if sc.episode_horizon < 1:
        raise ScenarioError("episode_horizon must be at least 1")
    gx, gy = sc.goal_center
    for seg in sc.walls:
        if point_segment_distance(gx, gy, seg) <= sc.goal_radius:
            raise ScenarioError("goal_region intersects walls")
    if rect_intersects_walls(sc.object_corners_at(sc.start_pose), sc.walls):
        raise ScenarioError("object at start_pose collides with walls")


# ---------- occupancy grid ----------

@dataclass(frozen=True)
class OccupancyGrid:
    """M x M boolean occupancy over a square world window; cells[ix, iy], x-major."""

    origin: Vec2        # world position of the (0, 0) cell corner
    resolution: float   # meters per cell
    cells: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        self.cells.setflags(write=False)

    @property
    def m(self) -> int:
        return int(self.cells.shape[0])

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        ix = int(math.floor((x - self.origin[0]) / self.resolution))
        iy = int(math.floor((y - self.origin[1]) / self.resolution))
        return ix, iy

    def cell_center(self, ix: int, iy: int) -> Vec2:
        return (self.origin[0] + (ix + 0.5) * self.resolution,
                self.origin[1] + (iy + 0.5) * self.resolution)

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.m and 0 <= iy < self.m

    def is_free(self, ix: int, iy: int) -> bool:
        return self.in_bounds(ix, iy) and not bool(self.cells[ix, iy])


def rasterize(scenario: Scenario, m: int = 32, *, inflation: float | None = None,
              margin: float = 1.0) -> OccupancyGrid:
    """Rasterize walls into an M x M grid; a cell is occupied iff its square
    intersects any wall inflated by `inflation` (default: half the object's
    minor extent)."""
    if m < 8:
        raise ScenarioError(f"grid size M must be >= 8, got {m}")
    if inflation is None:
        inflation = scenario.object_spec.minor_extent / 2.0
    xmin, ymin, xmax, ymax = scenario.bounding_box()
    xmin -= margin
    ymin -= margin
    xmax += margin
    ymax += margin
    side = max(xmax - xmin, ymax - ymin)
    cx, cy = (xmin + xmax) / 2.0, (ymin + ymax) / 2.0
    origin = (cx - side / 2.0, cy - side / 2.0)
    res = side / m
    cells = np.zeros((m, m), dtype=bool)
    for ix in range(m):
        x0 = origin[0] + ix * res
        x1 = x0 + res
        for iy in range(m):
            y0 = origin[1] + iy * res
            y1 = y0 + res
            for seg in scenario.walls:
                if segment_rect_distance(seg, x0, y0, x1, y1) <= inflation:
                    cells[ix, iy] = True
                    break
    return OccupancyGrid(origin=origin, resolution=res, cells=cells)


def grid_connected(grid: OccupancyGrid, a: Vec2, b: Vec2) -> bool:
    """Flood fill (8-connected) between the free cells containing a and b."""
    sa = grid.world_to_cell(*a)
    sb = grid.world_to_cell(*b)
    if not (grid.is_free(*sa) and grid.is_free(*sb)):
        return False
    seen = np.zeros_like(grid.cells, dtype=bool)
    q: deque[tuple[int, int]] = deque([sa])
    seen[sa] = True
    while q:
        ix, iy = q.popleft()
        if (ix, iy) == sb:
            return True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = ix + dx, iy + dy
                if grid.is_free(nx, ny) and not seen[nx, ny]:
                    seen[nx, ny] = True
                    q.append((nx, ny))
    return False


# ---------- builtin scenario matrix ----------

def _robot() -> Embodiment:
    return Embodiment(max_vx=0.5, max_vy=0.35, max_yaw_rate=1.2,
                      com_height_min=0.45, com_height_max=0.85, com_height_default=0.68,
                      shoulder_height=0.95, wrist_workspace=0.9)


def _partner() -> Embodiment:
    return Embodiment(max_vx=0.6, max_vy=0.45, max_yaw_rate=1.5,
                      com_height_min=0.5, com_height_max=1.0, com_height_default=0.8,
                      shoulder_height=1.1, wrist_workspace=1.0)


def _carry_object(length: float = 1.2, width: float = 0.5) -> ObjectSpec:
    half = length / 2.0
    return ObjectSpec(length=length, width=width, handles=((half, 0.0), (-half, 0.0)),
                      rest_height=0.5)


def _push_object() -> ObjectSpec:
    # both stations on the rear (-x) edge so agents push side by side
    return ObjectSpec(length=1.0, width=0.8, handles=((-0.5, 0.22), (-0.5, -0.22)),
                      rest_height=0.45, grip_offset=0.0)


def _box(xmin: float, ymin: float, xmax: float, ymax: float) -> list[Segment]:
    return [
        (xmin, ymin, xmax, ymin),
        (xmax, ymin, xmax, ymax),
        (xmax, ymax, xmin, ymax),
        (xmin, ymax, xmin, ymin),
    ]


def _make_s11() -> Scenario:
    # straight directional push along a wide corridor
    walls = [(-2.0, -1.5, 7.0, -1.5), (-2.0, 1.5, 7.0, 1.5)]
    return Scenario(id="S11", task_mode="push", walls=tuple(walls), object_spec=_push_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(5.0, 0.0), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=120, category="OSP")


def _make_s12() -> Scenario:
    # goal behind the start heading: the pair has to bring the object around
    walls = _box(-6.5, -3.0, 3.0, 3.0)
    return Scenario(id="S12", task_mode="push", walls=tuple(walls), object_spec=_push_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(-4.5, 0.0), goal_radius=0.7,
                    embodiments=(_robot(), _partner()), episode_horizon=200, category="OSP")


def _make_s13() -> Scenario:
    # push down a corridor, then enter a side pocket at 90 degrees
    walls = [
        (-2.0, -1.4, 6.5, -1.4),
        (-2.0, 1.4, 3.4, 1.4),
        (5.2, 1.4, 6.5, 1.4),
        (3.4, 1.4, 3.4, 3.6),
        (5.2, 1.4, 5.2, 3.6),
        (3.4, 3.6, 5.2, 3.6),
        (6.5, -1.4, 6.5, 1.4),
    ]
    return Scenario(id="S13", task_mode="push", walls=tuple(walls), object_spec=_push_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(4.3, 2.6), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=220, category="OSP")


GATE_WIDTH = 1.2  # m, S21 free opening between the two wall segments


def _make_s21() -> Scenario:
    half = GATE_WIDTH / 2.0
    walls = [(3.0, -4.0, 3.0, -half), (3.0, half, 3.0, 4.0)]
    return Scenario(id="S21", task_mode="carry", walls=tuple(walls), object_spec=_carry_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(6.0, 0.0), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=120, category="SCT")


def _make_s22() -> Scenario:
    # two offset baffles force an S-shaped route
    walls = _box(-1.5, -2.6, 8.0, 2.6) + [
        (2.0, -2.6, 2.0, 0.7),
        (4.5, -0.7, 4.5, 2.6),
    ]
    return Scenario(id="S22", task_mode="carry", walls=tuple(walls), object_spec=_carry_object(),
                    start_pose=(0.0, -1.3, 0.0), goal_center=(6.8, 0.0), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=200, category="SCT")


def _make_s23() -> Scenario:
    # out along the lower aisle, around the divider tip, back along the upper aisle
    walls = _box(-1.5, -2.4, 6.5, 2.4) + [(-1.5, 0.0, 4.2, 0.0)]
    return Scenario(id="S23", task_mode="carry", walls=tuple(walls), object_spec=_carry_object(),
                    start_pose=(0.0, -1.2, 0.0), goal_center=(0.0, 1.2), goal_radius=0.55,
                    embodiments=(_robot(), _partner()), episode_horizon=220, category="SCT")


def _long_object() -> ObjectSpec:
    return ObjectSpec(length=1.6, width=0.5, handles=((0.8, 0.0), (-0.8, 0.0)), rest_height=0.5)


def _make_s31() -> Scenario:
    # long payload, agents at opposite ends facing each other, straight haul
    walls = [(-2.5, -1.6, 7.0, -1.6), (-2.5, 1.6, 7.0, 1.6)]
    return Scenario(id="S31", task_mode="carry", walls=tuple(walls), object_spec=_long_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(5.0, 0.0), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=120, category="SLH")


def _make_s32() -> Scenario:
    # sideways shuffle: goal displaced laterally from the object's axis
    walls = [(-2.6, -1.2, -2.6, 4.6), (2.6, -1.2, 2.6, 4.6)]
    return Scenario(id="S32", task_mode="carry", walls=tuple(walls), object_spec=_long_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(0.0, 3.2), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=140, category="SLH")


def _make_s33() -> Scenario:
    # thread a long payload up through a ceiling slot: the corridor is lower
    # than the payload is long, so it must pivot exactly while entering
    hw = 0.85      # approach corridor half-height
    exit_w = 1.0   # slot width: single-file passable, too tight for the naive swing
    ex_c = 2.6
    ex0, ex1 = ex_c - exit_w / 2.0, ex_c + exit_w / 2.0
    cap_x = ex1 + 1.0
    walls = [
        (-1.5, -hw, cap_x, -hw),
        (cap_x, -hw, cap_x, hw),
        (-1.5, hw, ex0, hw),
        (ex1, hw, cap_x, hw),
        (ex0, hw, ex0, 5.4),
        (ex1, hw, ex1, 5.4),
        # ceiling stubs flanking the slot: an agent that overshoots the slot
        # window gets caught on them instead of sliding back in for free
        (1.9, hw - 0.4, 1.9, hw),
        (3.3, hw - 0.4, 3.3, hw),
    ]
    return Scenario(id="S33", task_mode="carry", walls=tuple(walls), object_spec=_long_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(ex_c, 4.4), goal_radius=0.45,
                    embodiments=(_robot(), _partner()), episode_horizon=240, category="SLH")


def _make_c1() -> Scenario:
    # obstacle-free straight carry corridor (5 m), the desk-scale training map
    return Scenario(id="C1", task_mode="carry", walls=(), object_spec=_carry_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(5.0, 0.0), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=80, category="custom")


def _make_p1() -> Scenario:
    # obstacle-free straight push corridor
    return Scenario(id="P1", task_mode="push", walls=(), object_spec=_push_object(),
                    start_pose=(0.0, 0.0, 0.0), goal_center=(4.0, 0.0), goal_radius=0.6,
                    embodiments=(_robot(), _partner()), episode_horizon=120, category="custom")


_BUILTIN_FACTORIES = {
    "S11": _make_s11, "S12": _make_s12, "S13": _make_s13,
    "S21": _make_s21, "S22": _make_s22, "S23": _make_s23,
    "S31": _make_s31, "S32": _make_s32, "S33": _make_s33,
    "C1": _make_c1, "P1": _make_p1,
}

SCENARIO_IDS = tuple(k for k in _BUILTIN_FACTORIES if k.startswith("S"))
CATEGORIES = {"OSP": ("S11", "S12", "S13"), "SCT": ("S21", "S22", "S23"), "SLH": ("S31", "S32", "S33")}


def builtin_scenario(scenario_id: str) -> Scenario:
    try:
        return _BUILTIN_FACTORIES[scenario_id]()
    except KeyError:
        raise ScenarioError(f"unknown builtin scenario {scenario_id!r}; "
                            f"available: {sorted(_BUILTIN_FACTORIES)}") from None


# ---------- file I/O ----------

def scenario_to_dict(sc: Scenario) -> dict:
    d = asdict(sc)
    d["schema"] = SCENARIO_SCHEMA
    return d


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema") != SCENARIO_SCHEMA:
        raise ScenarioError(f"unsupported scenario schema {d.get('schema')!r}, expected {SCENARIO_SCHEMA!r}")
    try:
        obj = d["object_spec"]
        spec = ObjectSpec(length=float(obj["length"]), width=float(obj["width"]),
                          handles=tuple(tuple(float(v) for v in h) for h in obj["handles"]),
                          rest_height=float(obj.get("rest_height", 0.45)),
                          grip_offset=float(obj.get("grip_offset", 0.15)))
        embs = tuple(Embodiment(**{k: float(v) for k, v in e.items()}) for e in d["embodiments"])
        return Scenario(
            id=str(d["id"]),
            task_mode=str(d["task_mode"]),
            walls=tuple(tuple(float(v) for v in w) for w in d["walls"]),
            object_spec=spec,
            start_pose=tuple(float(v) for v in d["start_pose"]),
            goal_center=tuple(float(v) for v in d["goal_center"]),
            goal_radius=float(d["goal_radius"]),
            embodiments=embs,
            episode_horizon=int(d["episode_horizon"]),
            category=str(d.get("category", "custom")),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario file: {exc}") from exc


def load_scenario(path_or_id: str | Path) -> Scenario:
    """Load a scenario by builtin id or from a scenario_v1 JSON file."""
    key = str(path_or_id)
    if key in _BUILTIN_FACTORIES:
        return _BUILTIN_FACTORIES[key]()
    path = Path(path_or_id)
    if not path.exists():
        raise ScenarioError(f"no builtin scenario or file named {key!r}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    return scenario_from_dict(data)


def save_scenario(sc: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2))
