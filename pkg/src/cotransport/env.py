"""Episode composition: cognition plans anchors once per episode, the policy
layer steps the simulator through the residual command map, and both agents
receive the shared reward.

Planning is tiered: visibility-restricted proposals with consensus first,
the same with the map prior when views disconnect the goal, and a single
omniscient proposal as the last resort.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import cognition
from .cognition import AnchorSequence, CognitionError
from .mdp import (
    ACTION_DIM,
    AnchorTracker,
    FrameStack,
    RewardConfig,
    build_frame,
    compute_reward,
    nominal_controller,
    residual_map,
)
from .scenario import OccupancyGrid, Scenario, rasterize
from .sim import Simulator, SimParams, StepEvents, WorldState, world_from_dict, world_to_dict

GLOBAL_STATE_DIM = 54
JOINT_ACTION_DIM = 2 * ACTION_DIM


@dataclass
class EnvConfig:
    reward: RewardConfig = field(default_factory=RewardConfig)
    sim: SimParams = field(default_factory=SimParams)
    grid_m: int = 32
    n_rays: int = 36
    d_max: float = 5.0
    start_jitter: float = 0.0
    plan_spacing: float = cognition.DEFAULT_SPACING
    merge_radius: float = cognition.DEFAULT_MERGE_RADIUS
    no_cognition: bool = False    # ablation: zeroed task guidance, nominal holds position
    planner_transport: object | None = None   # external planner adapter, optional


def plan_anchors(scenario: Scenario, grid: OccupancyGrid, world: WorldState, *,
                 spacing: float, merge_radius: float,
                 transport: object | None = None) -> AnchorSequence:
    """Tiered episode planning; deterministic for a given world state."""
    obj_pos = (world.object.pose[0], world.object.pose[1])
    goal, radius = scenario.goal_center, scenario.goal_radius

    def internal() -> AnchorSequence:
        known_free = np.asarray(~grid.cells)
        for known in (None, known_free):
            try:
                props = []
                for i in range(2):
                    p = cognition.propose(grid, obj_pos, goal, radius,
                                          world.agents[i].position, spacing=spacing,
                                          known_mask=known, agent_idx=i)
                    props.append(cognition.feasibility_filter(
                        p, scenario.embodiments[i], scenario.object_spec,
                        walls=scenario.walls, grid=grid, spacing=spacing))
                return cognition.consensus(props[0], props[1], grid=grid, goal_center=goal,
                                           goal_radius=radius, spacing=spacing,
                                           merge_radius=merge_radius)
            except CognitionError:
                continue
        # last resort: one omniscient proposal filtered for the tighter embodiment
        emb = max(scenario.embodiments, key=lambda e: e.side_margin)
        p = cognition.propose(grid, obj_pos, goal, radius, world.agents[0].position,
                              spacing=spacing, known_mask=known_free, agent_idx=0)
        p = cognition.feasibility_filter(p, emb, scenario.object_spec,
                                         walls=scenario.walls, grid=grid, spacing=spacing)
        seq = AnchorSequence(anchors=p.anchors, spacing=spacing)
        cognition.validate_anchor_sequence(seq, grid, goal, radius)
        return seq

    if transport is None:
        return internal()
    request = cognition.PlannerRequest(
        grid=grid, object_pos=obj_pos, goal_center=goal, goal_radius=radius,
        views=tuple((a.position[0], a.position[1], a.yaw) for a in world.agents))
    emb = max(scenario.embodiments, key=lambda e: e.side_margin)
    return cognition.external_adapter(transport, request, embodiment=emb,
                                      object_spec=scenario.object_spec, walls=scenario.walls,
                                      spacing=spacing, fallback=internal)


def _snap_world(world: WorldState, grid: OccupancyGrid) -> WorldState:
    """Copy of the world with object and agent positions snapped to their cell
    centers (planning resolution)."""
    w = copy.deepcopy(world)
    ox, oy = grid.cell_center(*grid.world_to_cell(*w.object.pose[:2]))
    w.object.pose = (ox, oy, w.object.pose[2])
    for a in w.agents:
        a.position = grid.cell_center(*grid.world_to_cell(*a.position))
    return w


class TransportEnv:
    """One episodic environment instance (single-writer, no shared state)."""

    def __init__(self, scenario: Scenario, cfg: EnvConfig | None = None):
        self.scenario = scenario
        self.cfg = cfg or EnvConfig()
        self.sim = Simulator(scenario, self.cfg.sim)
        self.grid = rasterize(scenario, self.cfg.grid_m)
        self.world: WorldState | None = None
        self.anchors: AnchorSequence | None = None
        self.tracker: AnchorTracker | None = None
        self.stacks = (FrameStack(), FrameStack())
        self.step_count = 0
        self._plan_cache: dict[tuple, AnchorSequence] = {}

    # -- episode control --

    def _plan(self) -> AnchorSequence:
        """Plan from cell-quantized poses so the result is a pure function of
        the cache key (start jitter cannot leak episode order into replans)."""
        w = self.world
        key = (self.grid.world_to_cell(*w.object.pose[:2]),
               self.grid.world_to_cell(*w.agents[0].position),
               self.grid.world_to_cell(*w.agents[1].position))
        cached = self._plan_cache.get(key)
        if cached is not None:
            return cached
        snapped = _snap_world(w, self.grid)
        plan = plan_anchors(self.scenario, self.grid, snapped,
                            spacing=self.cfg.plan_spacing,
                            merge_radius=self.cfg.merge_radius,
                            transport=self.cfg.planner_transport)
        self._plan_cache[key] = plan
        return plan

    def reset(self, seed: int) -> tuple[np.ndarray, np.ndarray]:
        self.world = self.sim.reset(seed, start_jitter=self.cfg.start_jitter)
        self.anchors = self._plan()
        self.tracker = AnchorTracker(self.anchors, self.cfg.reward.capture_radius)
        self.tracker.advance((self.world.object.pose[0], self.world.object.pose[1]))
        for s in self.stacks:
            s.reset()
        self.step_count = 0
        return self._observations()

    def step(self, actions, *, record_substates: bool = False
             ) -> tuple[tuple[np.ndarray, np.ndarray], float, bool, dict]:
        assert self.world is not None, "reset() before step()"
        commands = tuple(
            residual_map(actions[i], self._nominal(i), self.cfg.reward,
                         sim=self.sim, agent_idx=i)
            for i in range(2)
        )
        prev = self.world
        nxt, events, trace = self.sim.step(prev, commands, record_substates=record_substates)
        reward, gated, terminal_drop = compute_reward(
            prev, nxt, self.anchors, self.cfg.reward, self.scenario.task_mode, self.tracker)
        self.world = nxt
        self.step_count += 1
        goal = self.sim.detect_goal(nxt)
        timeout = self.step_count >= self.scenario.episode_horizon
        done = bool(terminal_drop or goal or timeout)
        info = {
            "goal": goal, "drop": terminal_drop, "timeout": timeout and not goal and not terminal_drop,
            "gated": gated, "events": events, "commands": commands,
        }
        if record_substates:
            info["substates"] = trace
        return self._observations(), reward, done, info

    def _nominal(self, agent_idx: int):
        return nominal_controller(self.world, agent_idx, self.anchors, sim=self.sim,
                                  anchor_idx=self.tracker.index,
                                  hold_position=self.cfg.no_cognition)

    def _observations(self) -> tuple[np.ndarray, np.ndarray]:
        frames = [
            build_frame(self.world, i, self.anchors, sim=self.sim,
                        anchor_idx=self.tracker.index, n_rays=self.cfg.n_rays,
                        d_max=self.cfg.d_max, zero_task=self.cfg.no_cognition)
            for i in range(2)
        ]
        return tuple(self.stacks[i].stack(frames[i]) for i in range(2))

    # -- centralized-critic view --

    def global_state(self) -> np.ndarray:
        """Flat global summary for the joint-action critic (see schema.json)."""
        w = self.world
        out: list[float] = []
        for a in w.agents:
            out += [*a.position, *a.velocity, a.yaw, a.yaw_rate, a.com_height, a.torso_pitch]
            for wr in a.wrists:
                out += list(wr)
        o = w.object
        out += [*o.pose, *o.planar_velocity, o.heading_rate, *o.corner_heights, o.com_height]
        out += [float(c) for c in w.contacts]
        pts = self.anchors.anchors
        ox, oy, _ = o.pose
        if self.cfg.no_cognition:
            out += [0.0] * 10
        else:
            for k in range(5):
                p = pts[min(self.tracker.index + k, len(pts) - 1)]
                out += [p[0] - ox, p[1] - oy]
        out.append(self.step_count / self.scenario.episode_horizon)
        vec = np.asarray(out, dtype=np.float64)
        assert vec.shape == (GLOBAL_STATE_DIM,)
        return vec

    # -- bit-exact persistence for resumable training --

    def state_dict(self) -> dict:
        return {
            "world": world_to_dict(self.world),
            "anchors": [list(a) for a in self.anchors.anchors],
            "spacing": self.anchors.spacing,
            "tracker_index": self.tracker.index,
            "stacks": [s.snapshot() for s in self.stacks],
            "step_count": self.step_count,
        }

    def load_state_dict(self, d: dict) -> None:
        self.world = world_from_dict(d["world"])
        self.anchors = AnchorSequence(anchors=tuple(tuple(a) for a in d["anchors"]),
                                      spacing=d["spacing"])
        self.tracker = AnchorTracker(self.anchors, self.cfg.reward.capture_radius)
        self.tracker.index = int(d["tracker_index"])
        for s, snap in zip(self.stacks, d["stacks"]):
            s.restore(snap)
        self.step_count = int(d["step_count"])
