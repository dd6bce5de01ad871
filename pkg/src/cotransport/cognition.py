"""Waypoint cognition: per-agent candidate proposal, feasibility filtering,
and two-view consensus into a shared anchor sequence.

The planner is a visibility-restricted grid shortest-path search; an adapter
protocol lets an external planner be plugged in behind the same validation
gate (anything it returns still has to pass feasibility and the anchor
invariants, otherwise the internal pipeline is used as fallback).
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import socket
import struct
import subprocess
from dataclasses import dataclass

import numpy as np

from .scenario import Embodiment, ObjectSpec, OccupancyGrid, Segment, point_segment_distance

log = logging.getLogger(__name__)

PLANNER_SCHEMA = "planner_v1"

Vec2 = tuple[float, float]

DEFAULT_SPACING = 1.0       # m, nominal inter-anchor distance
DEFAULT_MERGE_RADIUS = 0.5  # m, consensus pairing radius


class CognitionError(RuntimeError):
    """Planning failures: no visible path, no feasible anchors, consensus failure."""


@dataclass(frozen=True)
class CandidateProposal:
    agent_idx: int
    anchors: tuple[Vec2, ...]          # ordered by intended traversal
    visibility_mask: np.ndarray        # (M, M) bool, cells this agent observed
    scores: tuple[float, ...]          # negative residual path length per anchor

    def __post_init__(self) -> None:
        self.visibility_mask.setflags(write=False)
        if len(self.scores) != len(self.anchors):
            raise CognitionError("scores and anchors must have equal length")


@dataclass(frozen=True)
class AnchorSequence:
    anchors: tuple[Vec2, ...]
    spacing: float

    def __post_init__(self) -> None:
        if len(self.anchors) < 1:
            raise CognitionError("anchor sequence must contain at least one anchor")

    def arc_length(self) -> float:
        return sum(math.hypot(b[0] - a[0], b[1] - a[1])
                   for a, b in zip(self.anchors, self.anchors[1:]))


def validate_anchor_sequence(seq: AnchorSequence, grid: OccupancyGrid,
                             goal_center: Vec2, goal_radius: float) -> None:
    """Raise CognitionError naming the first violated anchor invariant."""
    pts = seq.anchors
    for a, b in zip(pts, pts[1:]):
        gap = math.hypot(b[0] - a[0], b[1] - a[1])
        if gap > 2.0 * seq.spacing + 1e-9:
            raise CognitionError(f"consensus failure: anchor gap {gap:.3f} m exceeds "
                                 f"2 x spacing ({2 * seq.spacing:.3f} m)")
    fx, fy = pts[-1]
    if math.hypot(fx - goal_center[0], fy - goal_center[1]) > goal_radius + 1e-9:
        raise CognitionError("final anchor outside goal_region")
    for x, y in pts:
        if not grid.is_free(*grid.world_to_cell(x, y)):
            raise CognitionError(f"anchor ({x:.2f}, {y:.2f}) lies in occupied space")


# ---------- grid visibility ----------

def visible_mask(grid: OccupancyGrid, viewpoint: Vec2) -> np.ndarray:
    """Line-of-sight mask from the viewpoint cell center; occluders are visible
    but do not transmit."""
    m = grid.m
    mask = np.zeros((m, m), dtype=bool)
    vc = grid.world_to_cell(*viewpoint)
    if not grid.in_bounds(*vc):
        return mask
    vx, vy = grid.cell_center(*vc)
    step = grid.resolution / 3.0
    for ix in range(m):
        for iy in range(m):
            tx, ty = grid.cell_center(ix, iy)
            dist = math.hypot(tx - vx, ty - vy)
            n = max(1, int(dist / step))
            clear = True
            for k in range(1, n):
                sx = vx + (tx - vx) * k / n
                sy = vy + (ty - vy) * k / n
                cell = grid.world_to_cell(sx, sy)
                if cell == (ix, iy) or cell == vc:
                    continue
                if not grid.is_free(*cell):
                    clear = False
                    break
            mask[ix, iy] = clear
    mask[vc] = True
    return mask


# ---------- shortest path ----------

_SQRT2 = math.sqrt(2.0)


def grid_shortest_path(grid: OccupancyGrid, start: tuple[int, int], goal: tuple[int, int],
                       allowed: np.ndarray | None = None) -> list[tuple[int, int]] | None:
    """8-connected A* (unit / sqrt2 costs, no diagonal corner cutting) over free
    cells intersected with `allowed`; returns cell path or None."""
    m = grid.m

    def ok(ix: int, iy: int) -> bool:
        if not grid.is_free(ix, iy):
            return False
        return allowed is None or bool(allowed[ix, iy])

    if not (grid.in_bounds(*start) and grid.in_bounds(*goal)):
        return None
    if not (ok(*start) and ok(*goal)):
        return None

    def h(ix: int, iy: int) -> float:
        dx, dy = abs(ix - goal[0]), abs(iy - goal[1])
        return (dx + dy) + (_SQRT2 - 2.0) * min(dx, dy)

    g_cost = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    heap: list[tuple[float, float, int, int]] = [(h(*start), 0.0, start[0], start[1])]
    closed = np.zeros((m, m), dtype=bool)
    while heap:
        _, gc, ix, iy = heapq.heappop(heap)
        if closed[ix, iy]:
            continue
        closed[ix, iy] = True
        if (ix, iy) == goal:
            path = [(ix, iy)]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return path
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nx, ny = ix + dx, iy + dy
                if not grid.in_bounds(nx, ny) or closed[nx, ny] or not ok(nx, ny):
                    continue
                if dx != 0 and dy != 0 and not (ok(ix + dx, iy) and ok(ix, iy + dy)):
                    continue  # no squeezing through diagonal gaps
                step = _SQRT2 if dx != 0 and dy != 0 else 1.0
                ng = gc + step
                if ng < g_cost.get((nx, ny), float("inf")) - 1e-12:
                    g_cost[(nx, ny)] = ng
                    parent[(nx, ny)] = (ix, iy)
                    heapq.heappush(heap, (ng + h(nx, ny), ng, nx, ny))
    return None


def _polyline_length(pts: list[Vec2]) -> float:
    return sum(math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts, pts[1:]))


def _resample(pts: list[Vec2], spacing: float, goal: Vec2) -> tuple[list[Vec2], list[float]]:
    """Points every `spacing` meters of arc length (with their arc positions),
    final point snapped to the goal."""
    total = _polyline_length(pts)
    out: list[Vec2] = []
    arcs: list[float] = []
    s = spacing
    while s < total - spacing / 2.0:
        out.append(_point_at(pts, s))
        arcs.append(s)
        s += spacing
    out.append(goal)
    arcs.append(total)
    return out, arcs


def _point_at(pts: list[Vec2], s: float) -> Vec2:
    acc = 0.0
    for a, b in zip(pts, pts[1:]):
        seg = math.hypot(b[0] - a[0], b[1] - a[1])
        if acc + seg >= s and seg > 0.0:
            t = (s - acc) / seg
            return (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
        acc += seg
    return pts[-1]


def propose(grid: OccupancyGrid, object_pos: Vec2, goal_center: Vec2, goal_radius: float,
            agent_view: Vec2, *, spacing: float = DEFAULT_SPACING,
            known_mask: np.ndarray | None = None, agent_idx: int = 0) -> CandidateProposal:
    """Candidate anchors along the visibility-restricted shortest path from the
    object cell to the goal cell."""
    mask = visible_mask(grid, agent_view)
    allowed = mask if known_mask is None else (mask | known_mask)
    start = grid.world_to_cell(*object_pos)
    goal = grid.world_to_cell(*goal_center)
    allowed = allowed.copy()
    if grid.in_bounds(*start):
        allowed[start] = True   # the object's own cell is always known
    path = grid_shortest_path(grid, start, goal, allowed)
    if path is None:
        raise CognitionError("no visible path from the object to the goal")
    pts = [object_pos] + [grid.cell_center(*c) for c in path[1:]] + [goal_center]
    anchors, arcs = _resample(pts, spacing, goal_center)
    total = _polyline_length(pts)
    scores = tuple(-(total - s) for s in arcs)
    return CandidateProposal(agent_idx=agent_idx, anchors=tuple(anchors),
                             visibility_mask=allowed, scores=scores)


# ---------- feasibility filtering ----------

def clearance_to_walls(p: Vec2, walls: tuple[Segment, ...]) -> float:
    if not walls:
        return float("inf")
    return min(point_segment_distance(p[0], p[1], seg) for seg in walls)


def feasibility_filter(proposal: CandidateProposal, embodiment: Embodiment,
                       object_spec: ObjectSpec, *, walls: tuple[Segment, ...],
                       grid: OccupancyGrid, spacing: float = DEFAULT_SPACING
                       ) -> CandidateProposal:
    """Drop anchors whose swept-object clearance is violated and re-densify the
    survivors to keep the spacing invariant."""
    if not proposal.anchors:
        raise CognitionError("no feasible anchors: empty proposal")
    required = object_spec.minor_extent / 2.0 + embodiment.side_margin
    kept = [a for a in proposal.anchors if clearance_to_walls(a, walls) >= required]
    if not kept:
        raise CognitionError("no feasible anchors after clearance filtering")

    def feasible(p: Vec2) -> bool:
        return (clearance_to_walls(p, walls) >= required
                and grid.is_free(*grid.world_to_cell(*p)))

    dense: list[Vec2] = [kept[0]]
    for b in kept[1:]:
        a = dense[-1]
        gap = math.hypot(b[0] - a[0], b[1] - a[1])
        if gap > 2.0 * spacing:
            n = int(math.ceil(gap / spacing))
            for k in range(1, n):
                p = (a[0] + (b[0] - a[0]) * k / n, a[1] + (b[1] - a[1]) * k / n)
                if feasible(p):
                    dense.append(p)
        dense.append(b)
    for a, b in zip(dense, dense[1:]):
        if math.hypot(b[0] - a[0], b[1] - a[1]) > 2.0 * spacing + 1e-9:
            raise CognitionError("no feasible anchors across a blocked passage")

    total = _polyline_length(dense)
    scores = []
    acc = 0.0
    for a, b in zip([dense[0]] + dense[:-1], dense):
        acc += math.hypot(b[0] - a[0], b[1] - a[1])
        scores.append(-(max(0.0, total - acc)))
    return CandidateProposal(agent_idx=proposal.agent_idx, anchors=tuple(dense),
                             visibility_mask=proposal.visibility_mask, scores=tuple(scores))


# ---------- consensus ----------

def _fractions(anchors: tuple[Vec2, ...]) -> list[float]:
    if len(anchors) == 1:
        return [0.0]
    total = _polyline_length(list(anchors))
    if total <= 0.0:
        return [0.0] * len(anchors)
    out = [0.0]
    acc = 0.0
    for a, b in zip(anchors, anchors[1:]):
        acc += math.hypot(b[0] - a[0], b[1] - a[1])
        out.append(acc / total)
    return out


def _poly_distance(p: Vec2, anchors: tuple[Vec2, ...]) -> float:
    if len(anchors) == 1:
        return math.hypot(p[0] - anchors[0][0], p[1] - anchors[0][1])
    best = float("inf")
    for a, b in zip(anchors, anchors[1:]):
        dx, dy = b[0] - a[0], b[1] - a[1]
        L2 = dx * dx + dy * dy
        t = 0.0 if L2 <= 0 else max(0.0, min(1.0, ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / L2))
        best = min(best, math.hypot(p[0] - (a[0] + t * dx), p[1] - (a[1] + t * dy)))
    return best


def consensus(p0: CandidateProposal, p1: CandidateProposal, *, grid: OccupancyGrid,
              goal_center: Vec2, goal_radius: float, spacing: float = DEFAULT_SPACING,
              merge_radius: float = DEFAULT_MERGE_RADIUS) -> AnchorSequence:
    """Merge two proposals into one anchor sequence.

    Anchors are paired by mutual-nearest arc-length fraction and averaged when
    within the merge radius; unpaired anchors survive only if both agents saw
    their cell or they lie on the other proposal's path.
    """
    if not p0.anchors or not p1.anchors:
        raise CognitionError("consensus requires two nonempty proposals")
    f0 = _fractions(p0.anchors)
    f1 = _fractions(p1.anchors)

    def nearest(fr: float, fs: list[float]) -> int:
        return min(range(len(fs)), key=lambda j: (abs(fs[j] - fr), j))

    n0 = [nearest(f, f1) for f in f0]
    n1 = [nearest(f, f0) for f in f1]
    paired0: set[int] = set()
    paired1: set[int] = set()
    merged: list[tuple[float, Vec2]] = []
    for i, j in enumerate(n0):
        if n1[j] != i:
            continue
        a, b = p0.anchors[i], p1.anchors[j]
        if math.hypot(a[0] - b[0], a[1] - b[1]) <= merge_radius:
            merged.append(((f0[i] + f1[j]) / 2.0,
                           ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0)))
            paired0.add(i)
            paired1.add(j)

    def keep_unpaired(p: Vec2, other: CandidateProposal) -> bool:
        cell = grid.world_to_cell(*p)
        both_seen = (grid.in_bounds(*cell)
                     and bool(p0.visibility_mask[cell]) and bool(p1.visibility_mask[cell]))
        return both_seen or _poly_distance(p, other.anchors) <= merge_radius

    for i, a in enumerate(p0.anchors):
        if i not in paired0 and keep_unpaired(a, p1):
            merged.append((f0[i], a))
    for j, b in enumerate(p1.anchors):
        if j not in paired1 and keep_unpaired(b, p0):
            merged.append((f1[j], b))

    if not merged:
        raise CognitionError("consensus failure: no anchors survived merging")
    merged.sort(key=lambda t: (t[0], t[1][0], t[1][1]))
    anchors = tuple(p for _, p in merged)
    seq = AnchorSequence(anchors=anchors, spacing=spacing)
    validate_anchor_sequence(seq, grid, goal_center, goal_radius)
    return seq


# ---------- external planner adapter ----------

def grid_to_wire(grid: OccupancyGrid) -> dict:
    return {
        "M": grid.m,
        "resolution": grid.resolution,
        "origin": list(grid.origin),
        "cells": "".join("1" if v else "0" for v in grid.cells.reshape(-1)),
    }


@dataclass(frozen=True)
class PlannerRequest:
    grid: OccupancyGrid
    object_pos: Vec2
    goal_center: Vec2
    goal_radius: float
    views: tuple[tuple[float, float, float], ...]   # (x, y, yaw) per agent

    def encode(self) -> bytes:
        payload = {
            "schema": PLANNER_SCHEMA,
            "grid": grid_to_wire(self.grid),
            "object_pos": list(self.object_pos),
            "goal": {"center": list(self.goal_center), "radius": self.goal_radius},
            "views": [{"pos": [v[0], v[1]], "yaw": v[2]} for v in self.views],
        }
        return json.dumps(payload, separators=(",", ":")).encode()


def decode_planner_response(data: bytes) -> tuple[Vec2, ...]:
    try:
        msg = json.loads(data.decode())
        anchors = tuple((float(a[0]), float(a[1])) for a in msg["anchors"])
    except (ValueError, KeyError, TypeError, IndexError) as exc:
        raise CognitionError(f"planner response violates {PLANNER_SCHEMA}: {exc}") from exc
    if not anchors:
        raise CognitionError("planner returned an empty anchor list")
    return anchors


class SubprocessPlanner:
    """Adapter transport over a child process pipe (one JSON line per message)."""

    def __init__(self, argv: list[str], timeout: float = 10.0):
        self.argv = argv
        self.timeout = timeout

    def request(self, payload: bytes) -> bytes:
        proc = subprocess.run(self.argv, input=payload + b"\n", capture_output=True,
                              timeout=self.timeout)
        if proc.returncode != 0:
            raise CognitionError(f"planner process exited with {proc.returncode}")
        return proc.stdout.strip()


class TcpPlanner:
    """Adapter transport over a local socket, 4-byte length-prefixed frames."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host = host
        self.port = port
        self.timeout = timeout

    def request(self, payload: bytes) -> bytes:
        with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
            sock.sendall(struct.pack(">I", len(payload)) + payload)
            header = _recv_exact(sock, 4)
            (n,) = struct.unpack(">I", header)
            return _recv_exact(sock, n)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise CognitionError("planner connection closed early")
        buf += chunk
    return buf


def external_adapter(transport, request: PlannerRequest, *, embodiment: Embodiment,
                     object_spec: ObjectSpec, walls: tuple[Segment, ...],
                     spacing: float = DEFAULT_SPACING, fallback=None) -> AnchorSequence:
    """Query an external planner; validate its plan, or fall back to the internal
    pipeline on timeout / schema violation / invariant violation."""
    try:
        raw = transport.request(request.encode())
        anchors = decode_planner_response(raw)
        proposal = CandidateProposal(agent_idx=-1, anchors=anchors,
                                     visibility_mask=np.ones_like(request.grid.cells, dtype=bool),
                                     scores=tuple(0.0 for _ in anchors))
        filtered = feasibility_filter(proposal, embodiment, object_spec, walls=walls,
                                      grid=request.grid, spacing=spacing)
        seq = AnchorSequence(anchors=filtered.anchors, spacing=spacing)
        validate_anchor_sequence(seq, request.grid, request.goal_center, request.goal_radius)
        return seq
    except (CognitionError, subprocess.TimeoutExpired, socket.timeout, OSError) as exc:
        log.warning("external planner rejected (%s); using internal pipeline", exc)
        if fallback is None:
            raise CognitionError(f"external planner failed and no fallback given: {exc}") from exc
        return fallback()
