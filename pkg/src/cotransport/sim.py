"""Planar physics-lite world stepped at f_high beneath the f_low policy tick.

Agent bases, posture, and wrists track task-space commands through a
first-order lag (the whole-body-control proxy); the payload follows the
grasped handles rigidly in carry mode or accumulates pushed velocity in push
mode.  All state is plain Python floats so replay logs round-trip bit-exactly
through JSON.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from .scenario import (
    Scenario,
    Segment,
    point_segment_distance,
    rect_intersects_walls,
)

if TYPE_CHECKING:  # avoids a runtime cycle with mdp, which imports sim types
    from .mdp import TaskSpaceCommand

Vec2 = tuple[float, float]
Vec3 = tuple[float, float, float]


class SimError(RuntimeError):
    """Raised on malformed commands (non-finite values)."""


@dataclass(frozen=True)
class SimParams:
    """Two-rate stepping constants and coupling tolerances."""

    f_low: float = 2.0       # Hz, policy tick
    f_high: float = 50.0     # Hz, tracking substep
    tau_track: float = 0.15  # s, first-order lag time constant
    r_break: float = 0.25    # m, grasp breakaway radius
    z_min: float = 0.2       # m, drop height threshold for the object CoM
    push_band: float = 0.10  # m, wrist-to-edge distance that counts as pushing contact
    carry_standoff: float = 0.40   # m, agent body offset outward from its handle
    push_standoff: float = 0.35    # m, agent body offset behind its contact station
    lin_damping_tau: float = 0.4   # s, pushed-object velocity decay when untouched
    rot_damping_tau: float = 0.3   # s, pushed-object spin decay
    push_rot_gain: float = 1.2     # 1/m, contact-offset torque to heading-rate gain

    @property
    def dt_low(self) -> float:
        return 1.0 / self.f_low

    @property
    def dt_high(self) -> float:
        return 1.0 / self.f_high

    @property
    def n_sub(self) -> int:
        return int(round(self.f_high / self.f_low))


@dataclass
class AgentState:
    position: Vec2
    velocity: Vec2            # world frame
    yaw: float
    yaw_rate: float
    com_height: float
    torso_pitch: float
    wrists: tuple[Vec3, Vec3]  # world frame, (left, right)
    embodiment_id: int


@dataclass
class ObjectState:
    pose: Vec3                # (x, y, heading)
    planar_velocity: Vec2
    heading_rate: float
    corner_heights: tuple[float, float, float, float]
    com_height: float


@dataclass
class WorldState:
    time: float
    agents: tuple[AgentState, AgentState]
    object: ObjectState
    contacts: tuple[bool, bool, bool, bool]   # agent0 L/R, agent1 L/R
    dropped: bool


@dataclass(frozen=True)
class StepEvents:
    dropped: bool        # drop occurred during this policy step
    wall_hit: bool       # any sliding correction or blocked object motion
    goal_entered: bool   # goal predicate true at the end of the step


# ---------- small vector helpers (pure python for determinism) ----------

def rot2(th: float, x: float, y: float) -> Vec2:
    c, s = math.cos(th), math.sin(th)
    return (c * x - s * y, s * x + c * y)


def wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def clamp(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v


def object_corners(scenario: Scenario, pose: Vec3) -> list[Vec2]:
    return scenario.object_corners_at(pose)


def wrist_attachments_local(scenario: Scenario) -> list[Vec2]:
    """Object-frame attachment points, order (agent0 L, agent0 R, agent1 L, agent1 R)."""
    spec = scenario.object_spec
    out: list[Vec2] = []
    for hx, hy in spec.handles:
        off = spec.grip_offset
        out.append((hx, hy + off))
        out.append((hx, hy - off))
    return out


def object_plane(state: ObjectState, scenario: Scenario) -> tuple[float, float]:
    """Gradient (gx, gy) of the suspension plane fitted to the 4 corner heights."""
    corners = scenario.object_corners_at(state.pose)
    cx = sum(c[0] for c in corners) / 4.0
    cy = sum(c[1] for c in corners) / 4.0
    mz = sum(state.corner_heights) / 4.0
    sxx = sxy = syy = bx = by = 0.0
    for (x, y), z in zip(corners, state.corner_heights):
        dx, dy, dz = x - cx, y - cy, z - mz
        sxx += dx * dx
        sxy += dx * dy
        syy += dy * dy
        bx += dx * dz
        by += dy * dz
    det = sxx * syy - sxy * sxy
    if abs(det) < 1e-12:
        return (0.0, 0.0)
    return ((syy * bx - sxy * by) / det, (sxx * by - sxy * bx) / det)


def suspension_tilt(state: ObjectState, scenario: Scenario) -> float:
    """Angle (rad) between the suspension-plane normal and vertical."""
    gx, gy = object_plane(state, scenario)
    return math.atan(math.hypot(gx, gy))


class Simulator:
    """Deterministic two-rate stepper for one scenario."""

    def __init__(self, scenario: Scenario, params: SimParams | None = None):
        self.scenario = scenario
        self.params = params or SimParams()
        self._attach_local = wrist_attachments_local(scenario)

    # ---------- reset ----------

    def reset(self, seed: int, *, start_jitter: float = 0.0) -> WorldState:
        sc = self.scenario
        pose = sc.start_pose
        if start_jitter > 0.0:
            seq = np.random.SeedSequence([seed & 0xFFFFFFFF, _stable_id_hash(sc.id)])
            rng = np.random.default_rng(seq)
            for _ in range(20):
                cand = (pose[0] + float(rng.uniform(-start_jitter, start_jitter)),
                        pose[1] + float(rng.uniform(-start_jitter, start_jitter)),
                        pose[2] + float(rng.uniform(-0.5 * start_jitter, 0.5 * start_jitter)))
                if not rect_intersects_walls(sc.object_corners_at(cand), sc.walls):
                    pose = cand
                    break
        if sc.task_mode == "carry":
            return self._reset_carry(pose)
        return self._reset_push(pose)

    def _reset_carry(self, pose: Vec3) -> WorldState:
        sc, p = self.scenario, self.params
        spec = sc.object_spec
        z = spec.rest_height
        obj = ObjectState(pose=pose, planar_velocity=(0.0, 0.0), heading_rate=0.0,
                          corner_heights=(z, z, z, z), com_height=z)
        agents = []
        for i, (hx, hy) in enumerate(spec.handles):
            wx, wy = rot2(pose[2], hx, hy)
            hw = (pose[0] + wx, pose[1] + wy)
            norm = math.hypot(hx, hy)
            out_dir = rot2(pose[2], hx / norm, hy / norm) if norm > 0 else (1.0, 0.0)
            apos = (hw[0] + out_dir[0] * p.carry_standoff, hw[1] + out_dir[1] * p.carry_standoff)
            yaw = math.atan2(pose[1] - apos[1], pose[0] - apos[0])  # face the payload
            wl = self.attach_world(obj, 2 * i)
            wr = self.attach_world(obj, 2 * i + 1)
            emb = sc.embodiments[i]
            agents.append(AgentState(position=apos, velocity=(0.0, 0.0), yaw=yaw, yaw_rate=0.0,
                                     com_height=emb.com_height_default, torso_pitch=0.0,
                                     wrists=(wl, wr), embodiment_id=i))
        return WorldState(time=0.0, agents=(agents[0], agents[1]), object=obj,
                          contacts=(True, True, True, True), dropped=False)

    def _reset_push(self, pose: Vec3) -> WorldState:
        sc, p = self.scenario, self.params
        spec = sc.object_spec
        z = spec.rest_height
        obj = ObjectState(pose=pose, planar_velocity=(0.0, 0.0), heading_rate=0.0,
                          corner_heights=(z, z, z, z), com_height=z)
        back = rot2(pose[2], -1.0, 0.0)
        agents = []
        for i, (hx, hy) in enumerate(spec.handles):
            cx, cy = rot2(pose[2], hx, hy)
            cpt = (pose[0] + cx, pose[1] + cy)
            apos = (cpt[0] + back[0] * p.push_standoff, cpt[1] + back[1] * p.push_standoff)
            emb = sc.embodiments[i]
            off = 0.08  # small wrist spread along the edge
            tang = rot2(pose[2], 0.0, 1.0)
            wl = (cpt[0] + tang[0] * off, cpt[1] + tang[1] * off, z)
            wr = (cpt[0] - tang[0] * off, cpt[1] - tang[1] * off, z)
            agents.append(AgentState(position=apos, velocity=(0.0, 0.0), yaw=pose[2], yaw_rate=0.0,
                                     com_height=emb.com_height_default, torso_pitch=0.0,
                                     wrists=(wl, wr), embodiment_id=i))
        state = WorldState(time=0.0, agents=(agents[0], agents[1]), object=obj,
                           contacts=(False, False, False, False), dropped=False)
        return replace(state, contacts=self._push_contacts(state))

    # ---------- stepping ----------

    def step(self, state: WorldState, commands: tuple["TaskSpaceCommand", "TaskSpaceCommand"],
             *, record_substates: bool = False
             ) -> tuple[WorldState, StepEvents, list[WorldState]]:
        p = self.params
        for cmd in commands:
            if not cmd.is_finite():
                raise SimError("non-finite command")
        cur = state
        wall_hit = False
        was_dropped = state.dropped
        trace: list[WorldState] = []
        for _ in range(p.n_sub):
            cur, hit = self._substep(cur, commands)
            wall_hit = wall_hit or hit
            if record_substates:
                trace.append(cur)
        events = StepEvents(dropped=cur.dropped and not was_dropped,
                            wall_hit=wall_hit,
                            goal_entered=self.detect_goal(cur))
        return cur, events, trace

    def _substep(self, state: WorldState, commands) -> tuple[WorldState, bool]:
        p = self.params
        dt = p.dt_high
        lag = math.exp(-dt / p.tau_track)
        wall_hit = False

        new_agents = []
        for i, (agent, cmd) in enumerate(zip(state.agents, commands)):
            emb = self.scenario.embodiments[i]
            vx_c = clamp(cmd.v_base[0], -emb.max_vx, emb.max_vx)
            vy_c = clamp(cmd.v_base[1], -emb.max_vy, emb.max_vy)
            wz_c = clamp(cmd.v_base[2], -emb.max_yaw_rate, emb.max_yaw_rate)

            yaw_rate = wz_c + (agent.yaw_rate - wz_c) * lag
            yaw = wrap_angle(agent.yaw + yaw_rate * dt)

            des_w = rot2(yaw, vx_c, vy_c)
            vx = des_w[0] + (agent.velocity[0] - des_w[0]) * lag
            vy = des_w[1] + (agent.velocity[1] - des_w[1]) * lag
            # re-clamp in body frame so the lag blend cannot exceed limits
            bvx, bvy = rot2(-yaw, vx, vy)
            bvx = clamp(bvx, -emb.max_vx, emb.max_vx)
            bvy = clamp(bvy, -emb.max_vy, emb.max_vy)
            vx, vy = rot2(yaw, bvx, bvy)

            px = agent.position[0] + vx * dt
            py = agent.position[1] + vy * dt
            px, py, vx, vy, hit = self._collide_disc(px, py, vx, vy, emb.body_radius)
            wall_hit = wall_hit or hit

            h_c = clamp(cmd.h_com, emb.com_height_min, emb.com_height_max)
            com = h_c + (agent.com_height - h_c) * lag
            a_c = clamp(cmd.alpha_ptc, -emb.pitch_range, emb.pitch_range)
            pitch = a_c + (agent.torso_pitch - a_c) * lag

            # wrists ride rigidly on the base at their commanded body-frame
            # offsets (xy rotated by yaw, z absolute), workspace-clamped
            shoulder = (px, py, emb.shoulder_height)
            wrists = []
            for k in range(2):
                bx, by, bz = cmd.wrists[k]
                wx, wy = rot2(yaw, bx, by)
                tgt = (px + wx, py + wy, bz)
                wrists.append(self._clamp_workspace(tgt, shoulder, emb.wrist_workspace))

            new_agents.append(AgentState(position=(px, py), velocity=(vx, vy), yaw=yaw,
                                         yaw_rate=yaw_rate, com_height=com, torso_pitch=pitch,
                                         wrists=(wrists[0], wrists[1]), embodiment_id=i))
        agents = (new_agents[0], new_agents[1])

        if state.dropped:
            obj = replace(state.object, planar_velocity=(0.0, 0.0), heading_rate=0.0)
            return (WorldState(time=state.time + dt, agents=agents, object=obj,
                               contacts=state.contacts, dropped=True), wall_hit)

        if self.scenario.task_mode == "carry":
            obj, contacts, dropped = self._carry_update(state, agents, dt)
        else:
            obj, hit = self._push_update(state, agents, dt)
            wall_hit = wall_hit or hit
            contacts = self._push_contacts_for(agents, obj)
            dropped = obj.com_height < self.params.z_min
        return (WorldState(time=state.time + dt, agents=agents, object=obj,
                           contacts=contacts, dropped=dropped), wall_hit)

    # ---------- carry coupling ----------

    def attach_world(self, obj: ObjectState, j: int) -> Vec3:
        ax, ay = self._attach_local[j]
        x, y, th = obj.pose
        wx, wy = rot2(th, ax, ay)
        gx, gy = object_plane(obj, self.scenario)
        px, py = x + wx, y + wy
        z = obj.com_height + gx * (px - x) + gy * (py - y)
        return (px, py, z)

    def _carry_update(self, state: WorldState, agents: tuple[AgentState, AgentState],
                      dt: float) -> tuple[ObjectState, tuple[bool, bool, bool, bool], bool]:
        p = self.params
        obj = state.object
        wrists = [agents[0].wrists[0], agents[0].wrists[1], agents[1].wrists[0], agents[1].wrists[1]]
        contacts = list(state.contacts)
        for j in range(4):
            if not contacts[j]:
                continue
            ax, ay, az = self.attach_world(obj, j)
            wx, wy, wz = wrists[j]
            if math.sqrt((wx - ax) ** 2 + (wy - ay) ** 2 + (wz - az) ** 2) > p.r_break:
                contacts[j] = False
        if not all(contacts):
            frozen = replace(obj, planar_velocity=(0.0, 0.0), heading_rate=0.0)
            return frozen, tuple(contacts), True

        # rigid SE(2) Procrustes fit of the attachment pattern to the wrist positions
        locals_ = self._attach_local
        mpx = sum(a[0] for a in locals_) / 4.0
        mpy = sum(a[1] for a in locals_) / 4.0
        mqx = sum(w[0] for w in wrists) / 4.0
        mqy = sum(w[1] for w in wrists) / 4.0
        sa = sb = 0.0
        for (ax, ay), (wx, wy, _) in zip(locals_, wrists):
            px, py = ax - mpx, ay - mpy
            qx, qy = wx - mqx, wy - mqy
            sa += px * qx + py * qy
            sb += px * qy - py * qx
        heading = math.atan2(sb, sa)
        rx, ry = rot2(heading, mpx, mpy)
        cx, cy = mqx - rx, mqy - ry
        pose = (cx, cy, heading)

        # suspension plane: through both grip points, level in the perpendicular
        g0 = _mean3(wrists[0], wrists[1])
        g1 = _mean3(wrists[2], wrists[3])
        ux, uy = g1[0] - g0[0], g1[1] - g0[1]
        un = math.hypot(ux, uy)
        if un > 1e-9:
            ux, uy = ux / un, uy / un
            slope = (g1[2] - g0[2]) / un
        else:
            ux, uy, slope = 1.0, 0.0, 0.0

        def plane_z(px: float, py: float) -> float:
            return g0[2] + slope * ((px - g0[0]) * ux + (py - g0[1]) * uy)

        corners = self.scenario.object_corners_at(pose)
        heights = tuple(plane_z(cx_, cy_) for cx_, cy_ in corners)
        com_h = plane_z(cx, cy)
        vel = ((cx - obj.pose[0]) / dt, (cy - obj.pose[1]) / dt)
        rate = wrap_angle(heading - obj.pose[2]) / dt
        new_obj = ObjectState(pose=pose, planar_velocity=vel, heading_rate=rate,
                              corner_heights=heights, com_height=com_h)
        dropped = com_h < p.z_min
        return new_obj, tuple(contacts), dropped

    # ---------- push coupling ----------

    def _object_frame_point(self, obj: ObjectState, x: float, y: float) -> Vec2:
        dx, dy = x - obj.pose[0], y - obj.pose[1]
        return rot2(-obj.pose[2], dx, dy)

    def _edge_signed_distance(self, obj: ObjectState, x: float, y: float) -> float:
        lx, ly = self._object_frame_point(obj, x, y)
        spec = self.scenario.object_spec
        ex = abs(lx) - spec.length / 2.0
        ey = abs(ly) - spec.width / 2.0
        if ex <= 0.0 and ey <= 0.0:
            return max(ex, ey)
        return math.hypot(max(ex, 0.0), max(ey, 0.0))

    def _push_contacts_for(self, agents, obj: ObjectState) -> tuple[bool, bool, bool, bool]:
        out = []
        for agent in agents:
            for w in agent.wrists:
                out.append(abs(self._edge_signed_distance(obj, w[0], w[1])) <= self.params.push_band)
        return (out[0], out[1], out[2], out[3])

    def _push_contacts(self, state: WorldState) -> tuple[bool, bool, bool, bool]:
        return self._push_contacts_for(state.agents, state.object)

    def _push_update(self, state: WorldState, agents, dt: float) -> tuple[ObjectState, bool]:
        p = self.params
        obj = state.object
        spec = self.scenario.object_spec
        pushes: list[tuple[Vec2, float, Vec2]] = []   # (normal, speed along normal, contact point)
        for agent in agents:
            pts = [w for w in agent.wrists
                   if abs(self._edge_signed_distance(obj, w[0], w[1])) <= p.push_band]
            if not pts:
                continue
            mx = sum(w[0] for w in pts) / len(pts)
            my = sum(w[1] for w in pts) / len(pts)
            lx, ly = self._object_frame_point(obj, mx, my)
            ex = abs(lx) - spec.length / 2.0
            ey = abs(ly) - spec.width / 2.0
            if ex >= ey:
                n_local = (-math.copysign(1.0, lx), 0.0)
            else:
                n_local = (0.0, -math.copysign(1.0, ly))
            n = rot2(obj.pose[2], n_local[0], n_local[1])
            s = agent.velocity[0] * n[0] + agent.velocity[1] * n[1]
            s = max(0.0, s)   # contact can push, never pull
            pushes.append((n, s, (mx, my)))

        if pushes:
            vx = sum(n[0] * s for n, s, _ in pushes) / len(pushes)
            vy = sum(n[1] * s for n, s, _ in pushes) / len(pushes)
            torque = 0.0
            for n, s, (mx, my) in pushes:
                rx, ry = mx - obj.pose[0], my - obj.pose[1]
                torque += rx * (n[1] * s) - ry * (n[0] * s)
            w_target = p.push_rot_gain * torque / len(pushes)
            rot_lag = math.exp(-dt / p.rot_damping_tau)
            rate = w_target + (obj.heading_rate - w_target) * rot_lag
        else:
            decay = math.exp(-dt / p.lin_damping_tau)
            vx = obj.planar_velocity[0] * decay
            vy = obj.planar_velocity[1] * decay
            rate = obj.heading_rate * math.exp(-dt / p.rot_damping_tau)

        cand = (obj.pose[0] + vx * dt, obj.pose[1] + vy * dt, wrap_angle(obj.pose[2] + rate * dt))
        blocked = rect_intersects_walls(self.scenario.object_corners_at(cand), self.scenario.walls)
        if blocked:
            new_obj = replace(obj, planar_velocity=(0.0, 0.0), heading_rate=0.0)
            return new_obj, True
        new_obj = replace(obj, pose=cand, planar_velocity=(vx, vy), heading_rate=rate)
        return new_obj, False

    # ---------- contacts with walls ----------

    def _collide_disc(self, px: float, py: float, vx: float, vy: float,
                      radius: float) -> tuple[float, float, float, float, bool]:
        hit = False
        for _ in range(3):
            moved = False
            for seg in self.scenario.walls:
                d = point_segment_distance(px, py, seg)
                if d >= radius:
                    continue
                cx, cy = _closest_on_segment(px, py, seg)
                if d > 1e-9:
                    nx, ny = (px - cx) / d, (py - cy) / d
                else:
                    sx, sy = seg[2] - seg[0], seg[3] - seg[1]
                    L = math.hypot(sx, sy) or 1.0
                    nx, ny = -sy / L, sx / L
                px, py = cx + nx * radius, cy + ny * radius
                vn = vx * nx + vy * ny
                if vn < 0.0:
                    vx -= vn * nx
                    vy -= vn * ny
                hit = True
                moved = True
            if not moved:
                break
        return px, py, vx, vy, hit

    def _clamp_workspace(self, point, shoulder: Vec3, radius: float) -> Vec3:
        dx = point[0] - shoulder[0]
        dy = point[1] - shoulder[1]
        dz = point[2] - shoulder[2]
        d = math.sqrt(dx * dx + dy * dy + dz * dz)
        if d <= radius:
            return (float(point[0]), float(point[1]), float(point[2]))
        k = radius / d
        return (shoulder[0] + dx * k, shoulder[1] + dy * k, shoulder[2] + dz * k)

    # ---------- sensing & predicates ----------

    def raycast(self, state: WorldState, agent_idx: int, n_rays: int = 36,
                d_max: float = 5.0) -> list[float]:
        """Ranges from the agent at yaw-relative angles spanning [0, 2pi)."""
        if n_rays < 1:
            raise ValueError("n_rays must be >= 1")
        agent = state.agents[agent_idx]
        ox, oy = agent.position
        segments: list[Segment] = list(self.scenario.walls)
        corners = self.scenario.object_corners_at(state.object.pose)
        for k in range(4):
            a, b = corners[k], corners[(k + 1) % 4]
            segments.append((a[0], a[1], b[0], b[1]))
        out = []
        for j in range(n_rays):
            ang = agent.yaw + 2.0 * math.pi * j / n_rays
            dx, dy = math.cos(ang), math.sin(ang)
            best = d_max
            for sx0, sy0, sx1, sy1 in segments:
                t = _ray_segment(ox, oy, dx, dy, sx0, sy0, sx1, sy1)
                if t is not None and t < best:
                    best = t
            out.append(best)
        return out

    def detect_goal(self, state: WorldState) -> bool:
        if state.dropped:
            return False
        gx, gy = self.scenario.goal_center
        x, y, _ = state.object.pose
        return math.hypot(x - gx, y - gy) <= self.scenario.goal_radius


def _closest_on_segment(px: float, py: float, seg: Segment) -> Vec2:
    x0, y0, x1, y1 = seg
    dx, dy = x1 - x0, y1 - y0
    L2 = dx * dx + dy * dy
    if L2 <= 0.0:
        return (x0, y0)
    t = clamp(((px - x0) * dx + (py - y0) * dy) / L2, 0.0, 1.0)
    return (x0 + t * dx, y0 + t * dy)


def _ray_segment(ox: float, oy: float, dx: float, dy: float,
                 x0: float, y0: float, x1: float, y1: float) -> float | None:
    ex, ey = x1 - x0, y1 - y0
    den = dx * ey - dy * ex
    if abs(den) < 1e-12:
        return None
    t = ((x0 - ox) * ey - (y0 - oy) * ex) / den
    u = ((x0 - ox) * dy - (y0 - oy) * dx) / den
    if t >= 0.0 and 0.0 <= u <= 1.0:
        return t
    return None


def _mean3(a: Vec3, b: Vec3) -> Vec3:
    return ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0)


def _stable_id_hash(s: str) -> int:
    h = 2166136261
    for ch in s.encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


# ---------- state (de)serialization for replay logs ----------

def world_to_dict(state: WorldState) -> dict:
    # explicit float()/bool() casts keep numpy scalars out of the JSON layer
    return {
        "time": float(state.time),
        "agents": [
            {
                "position": [float(v) for v in a.position],
                "velocity": [float(v) for v in a.velocity],
                "yaw": float(a.yaw), "yaw_rate": float(a.yaw_rate),
                "com_height": float(a.com_height),
                "torso_pitch": float(a.torso_pitch),
                "wrists": [[float(v) for v in w] for w in a.wrists],
                "embodiment_id": int(a.embodiment_id),
            }
            for a in state.agents
        ],
        "object": {
            "pose": [float(v) for v in state.object.pose],
            "planar_velocity": [float(v) for v in state.object.planar_velocity],
            "heading_rate": float(state.object.heading_rate),
            "corner_heights": [float(v) for v in state.object.corner_heights],
            "com_height": float(state.object.com_height),
        },
        "contacts": [bool(c) for c in state.contacts],
        "dropped": bool(state.dropped),
    }


def world_from_dict(d: dict) -> WorldState:
    agents = tuple(
        AgentState(position=tuple(a["position"]), velocity=tuple(a["velocity"]),
                   yaw=a["yaw"], yaw_rate=a["yaw_rate"], com_height=a["com_height"],
                   torso_pitch=a["torso_pitch"],
                   wrists=tuple(tuple(w) for w in a["wrists"]),
                   embodiment_id=int(a["embodiment_id"]))
        for a in d["agents"]
    )
    o = d["object"]
    obj = ObjectState(pose=tuple(o["pose"]), planar_velocity=tuple(o["planar_velocity"]),
                      heading_rate=o["heading_rate"], corner_heights=tuple(o["corner_heights"]),
                      com_height=o["com_height"])
    return WorldState(time=d["time"], agents=agents, object=obj,
                      contacts=tuple(bool(c) for c in d["contacts"]), dropped=bool(d["dropped"]))
