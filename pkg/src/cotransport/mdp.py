"""Observation construction, residual action mapping, and the shared team reward.

Per-agent observations are 94-dim frames (task window, ego, partner, object,
contacts, rays) stacked with two compressed history snapshots into the
210-dim policy input.  Policy actions in [-1, 1]^11 are scaled residuals on
top of a nominal anchor-tracking controller, and both agents always receive
the identical scalar reward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cognition import AnchorSequence
from .scenario import Scenario
from .sim import Simulator, WorldState, clamp, object_plane, rot2, wrap_angle, wrist_attachments_local

FRAME_DIM = 94
COMPRESSED_DIM = 58      # frame minus the 36 ray features
STACKED_DIM = 210        # 94 + 2 * 58
ACTION_DIM = 11
TASK_WINDOW = 5          # anchors in the guidance window
N_RAYS = 36
D_MAX = 5.0


@dataclass(frozen=True)
class TaskSpaceCommand:
    """11-DoF task-space command: base twist, posture, and two wrist targets."""

    v_base: tuple[float, float, float]      # (v_x, v_y, yaw_rate), body frame
    h_com: float
    alpha_ptc: float
    # wrist targets ride on the base: (x, y) in the body frame, z absolute
    wrists: tuple[tuple[float, float, float], tuple[float, float, float]]

    def is_finite(self) -> bool:
        vals = [*self.v_base, self.h_com, self.alpha_ptc, *self.wrists[0], *self.wrists[1]]
        return all(math.isfinite(v) for v in vals)

    def to_list(self) -> list[float]:
        return [*self.v_base, self.h_com, self.alpha_ptc, *self.wrists[0], *self.wrists[1]]

    @classmethod
    def from_list(cls, vals) -> "TaskSpaceCommand":
        v = [float(x) for x in vals]
        return cls(v_base=(v[0], v[1], v[2]), h_com=v[3], alpha_ptc=v[4],
                   wrists=((v[5], v[6], v[7]), (v[8], v[9], v[10])))


@dataclass(frozen=True)
class RewardConfig:
    """Weights of the progress / tilt / drop terms and the deviation gate."""

    alpha: float = 1.0        # progress weight
    beta: float = 0.5         # tilt penalty weight (carry only)
    gamma_drop: float = 10.0  # terminal drop penalty
    delta: float = 1.0        # m, lateral path-deviation gate
    capture_radius: float = 0.3  # m, anchor advance radius
    scaling: tuple[float, ...] = (0.3, 0.3, 0.5, 0.1, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1)

    def __post_init__(self) -> None:
        if len(self.scaling) != ACTION_DIM:
            raise ValueError(f"scaling must have {ACTION_DIM} entries")
        if min(self.scaling) <= 0 or self.alpha < 0 or self.beta < 0 or self.gamma_drop < 0:
            raise ValueError("reward weights must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")


@dataclass
class ObservationFrame:
    psi_task: np.ndarray   # (10,) anchor window relative to the object
    psi_ego: np.ndarray    # (13,)
    psi_ptn: np.ndarray    # (13,)
    psi_obj: np.ndarray    # (18,)
    psi_cont: np.ndarray   # (4,)
    psi_env: np.ndarray    # (36,) normalized rays

    def vector(self) -> np.ndarray:
        v = np.concatenate([self.psi_task, self.psi_ego, self.psi_ptn,
                            self.psi_obj, self.psi_cont, self.psi_env])
        assert v.shape == (FRAME_DIM,)
        return v

    def compressed(self) -> np.ndarray:
        v = np.concatenate([self.psi_task, self.psi_ego, self.psi_ptn,
                            self.psi_obj, self.psi_cont])
        assert v.shape == (COMPRESSED_DIM,)
        return v


class AnchorTracker:
    """Tracks the first unreached anchor; advances inside the capture radius."""

    def __init__(self, anchors: AnchorSequence, capture_radius: float):
        self.anchors = anchors
        self.capture_radius = capture_radius
        self.index = 0

    def current(self) -> tuple[float, float]:
        return self.anchors.anchors[self.index]

    def advance(self, pos: tuple[float, float]) -> None:
        pts = self.anchors.anchors
        while self.index < len(pts) - 1:
            ax, ay = pts[self.index]
            if math.hypot(pos[0] - ax, pos[1] - ay) <= self.capture_radius:
                self.index += 1
            else:
                break


def ray_features(distances, d_max: float = D_MAX) -> np.ndarray:
    """Normalized proximity features: 1 at contact, 0 at or beyond d_max."""
    out = np.empty(len(distances))
    for j, d in enumerate(distances):
        out[j] = 1.0 - min(d, d_max) / d_max
    return out


def build_frame(state: WorldState, agent_idx: int, anchors: AnchorSequence, *,
                sim: Simulator, anchor_idx: int = 0, n_rays: int = N_RAYS,
                d_max: float = D_MAX, zero_task: bool = False) -> ObservationFrame:
    """Assemble one 94-dim egocentric frame for `agent_idx`."""
    sc = sim.scenario
    agent = state.agents[agent_idx]
    partner = state.agents[1 - agent_idx]
    obj = state.object
    ax, ay = agent.position
    yaw = agent.yaw

    def rel(px: float, py: float) -> tuple[float, float]:
        return rot2(-yaw, px - ax, py - ay)

    def rotv(vx: float, vy: float) -> tuple[float, float]:
        return rot2(-yaw, vx, vy)

    # task window: next anchors relative to the object planar position,
    # padded by repeating the final anchor
    psi_task = np.zeros(2 * TASK_WINDOW)
    if not zero_task:
        pts = anchors.anchors
        ox, oy, _ = obj.pose
        for k in range(TASK_WINDOW):
            w = pts[min(anchor_idx + k, len(pts) - 1)]
            psi_task[2 * k] = w[0] - ox
            psi_task[2 * k + 1] = w[1] - oy

    pos_rel_obj = rel(obj.pose[0], obj.pose[1])
    v_ego = rotv(*agent.velocity)
    ego_wrists = []
    for w in agent.wrists:
        rx, ry = rel(w[0], w[1])
        ego_wrists += [rx, ry, w[2] - sc.embodiments[agent_idx].shoulder_height]
    psi_ego = np.array([
        -pos_rel_obj[0], -pos_rel_obj[1],    # agent position relative to the payload
        v_ego[0], v_ego[1],
        yaw,
        agent.com_height,
        agent.torso_pitch,
        *ego_wrists,
    ])

    ptn_pos = rel(*partner.position)
    v_ptn = rotv(*partner.velocity)
    ptn_wrists = []
    for w in partner.wrists:
        rx, ry = rot2(-yaw, w[0] - partner.position[0], w[1] - partner.position[1])
        ptn_wrists += [rx, ry, w[2] - sc.embodiments[1 - agent_idx].shoulder_height]
    psi_ptn = np.array([
        ptn_pos[0], ptn_pos[1],
        v_ptn[0], v_ptn[1],
        wrap_angle(partner.yaw - yaw),
        partner.com_height,
        partner.torso_pitch,
        *ptn_wrists,
    ])

    corners = sc.object_corners_at(obj.pose)
    obj_feats = []
    for (cx, cy), z in zip(corners, obj.corner_heights):
        rx, ry = rel(cx, cy)
        obj_feats += [rx, ry, z]
    com_rel = rel(obj.pose[0], obj.pose[1])
    v_obj = rotv(*obj.planar_velocity)
    obj_feats += [com_rel[0], com_rel[1], obj.com_height,
                  v_obj[0], v_obj[1], obj.heading_rate]
    psi_obj = np.array(obj_feats)

    # own contacts first, then the partner's
    c = state.contacts
    if agent_idx == 0:
        psi_cont = np.array([float(c[0]), float(c[1]), float(c[2]), float(c[3])])
    else:
        psi_cont = np.array([float(c[2]), float(c[3]), float(c[0]), float(c[1])])

    psi_env = ray_features(sim.raycast(state, agent_idx, n_rays, d_max), d_max)

    return ObservationFrame(psi_task=psi_task, psi_ego=psi_ego, psi_ptn=psi_ptn,
                            psi_obj=psi_obj, psi_cont=psi_cont, psi_env=psi_env)


class FrameStack:
    """Per-agent dual-snapshot history; missing slots repeat the current frame."""

    def __init__(self) -> None:
        self._history: list[np.ndarray] = []

    def reset(self) -> None:
        self._history.clear()

    def stack(self, frame: ObservationFrame) -> np.ndarray:
        cur = frame.vector()
        comp = frame.compressed()
        h1 = self._history[-1] if len(self._history) >= 1 else comp
        h2 = self._history[-2] if len(self._history) >= 2 else comp
        out = np.concatenate([cur, h1, h2])
        assert out.shape == (STACKED_DIM,)
        self._history.append(comp)
        if len(self._history) > 2:
            self._history.pop(0)
        return out

    def snapshot(self) -> list[list[float]]:
        return [h.tolist() for h in self._history]

    def restore(self, snap: list[list[float]]) -> None:
        self._history = [np.asarray(h, dtype=float) for h in snap]


# ---------- nominal controller and residual map ----------

@dataclass(frozen=True)
class NominalGains:
    k_goal: float = 0.8     # object-toward-anchor gain
    k_station: float = 1.2  # station-keeping gain
    k_yaw: float = 1.5      # turn-toward-tangent gain
    speed_frac: float = 0.7  # shared transport speed as a fraction of the slower agent's limit
    # station-keeping authority stays below the residual scale so a policy (or
    # human) that insists on leaving actually separates and the grasp parts
    station_cap: float = 0.2
    # total nominal planar speed stays below the locomotion residual scale
    # (0.3) for the same reason: full counter-residual must win, slowly
    v_nominal_cap: float = 0.25


TWIST_DEADBAND = 0.10   # rad, payload misalignment tolerated without correction
TWIST_STEP = 0.12       # rad per policy tick, bounded re-alignment rate


def carry_hold_heading(obj, anchors: AnchorSequence | None, anchor_idx: int) -> float:
    """Heading the grip pattern is held at: the current payload heading,
    nudged toward the route direction (mod pi) when misaligned beyond the
    deadband.  Bounded steps keep re-alignment from wrenching the grasp."""
    ox, oy, heading = obj.pose
    if anchors is None:
        return heading
    pts = anchors.anchors
    wx, wy = pts[min(anchor_idx, len(pts) - 1)]
    if math.hypot(wx - ox, wy - oy) < 0.3:
        return heading
    path_dir = math.atan2(wy - oy, wx - ox)
    mis = wrap_angle(path_dir - heading)
    if mis > math.pi / 2.0:
        mis -= math.pi
    elif mis < -math.pi / 2.0:
        mis += math.pi
    if abs(mis) <= TWIST_DEADBAND:
        return heading
    return heading + clamp(mis, -TWIST_STEP, TWIST_STEP)


def default_wrist_targets(state: WorldState, agent_idx: int, sim: Simulator, *,
                          yaw_pred: float | None = None,
                          anchors: AnchorSequence | None = None,
                          anchor_idx: int = 0
                          ) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    """Body-frame wrist targets: the handle-holding pose in carry mode, the
    edge-contact pose in push mode (where the hands are right now, held rigid
    to the base while it moves).

    `yaw_pred` lets the caller pre-compensate a commanded body rotation so
    that yawing the base does not twist the payload through the rigid hands.
    """
    agent = state.agents[agent_idx]
    ax, ay = agent.position
    obj = state.object
    frame_yaw = agent.yaw if yaw_pred is None else yaw_pred

    def to_body(p: tuple[float, float, float]) -> tuple[float, float, float]:
        bx, by = rot2(-frame_yaw, p[0] - ax, p[1] - ay)
        return (bx, by, p[2])

    if sim.scenario.task_mode == "carry":
        # hold the grip pattern level, at the payload's heading nudged toward
        # the route direction; within the deadband the pattern is exactly the
        # current attachment layout
        ox, oy, _ = obj.pose
        hold = carry_hold_heading(obj, anchors, anchor_idx)
        z = sim.scenario.object_spec.rest_height
        out = []
        for j in (2 * agent_idx, 2 * agent_idx + 1):
            lx, ly = wrist_attachments_local(sim.scenario)[j]
            wx, wy = rot2(hold, lx, ly)
            out.append(to_body((ox + wx, oy + wy, z)))
        return (out[0], out[1])
    spec = sim.scenario.object_spec
    hx, hy = spec.handles[agent_idx]
    x, y, th = obj.pose
    cx, cy = rot2(th, hx, hy)
    tang = rot2(th, 0.0, 1.0)
    off = 0.08
    z = spec.rest_height
    return (to_body((x + cx + tang[0] * off, y + cy + tang[1] * off, z)),
            to_body((x + cx - tang[0] * off, y + cy - tang[1] * off, z)))


def nominal_controller(state: WorldState, agent_idx: int, anchors: AnchorSequence, *,
                       sim: Simulator, anchor_idx: int = 0,
                       gains: NominalGains | None = None,
                       hold_position: bool = False) -> TaskSpaceCommand:
    """Anchor-tracking base motion with the default wrist pose."""
    g = gains or NominalGains()
    sc = sim.scenario
    emb = sc.embodiments[agent_idx]
    agent = state.agents[agent_idx]
    obj = state.object

    if hold_position:
        v_body = (0.0, 0.0, 0.0)
    else:
        pts = anchors.anchors
        wx, wy = pts[min(anchor_idx, len(pts) - 1)]
        ox, oy, _ = obj.pose
        v_obj = (g.k_goal * (wx - ox), g.k_goal * (wy - oy))
        # cap the shared transport speed below the slower agent's limit so
        # station-keeping keeps headroom to hold formation (and heading)
        v_cap = g.speed_frac * min(e.max_vx for e in sc.embodiments)
        v_norm = math.hypot(*v_obj)
        if v_norm > v_cap:
            v_obj = (v_obj[0] * v_cap / v_norm, v_obj[1] * v_cap / v_norm)

        if sc.task_mode == "carry":
            hx, hy = sc.object_spec.handles[agent_idx]
            n = math.hypot(hx, hy)
            out_dir = rot2(obj.pose[2], hx / n, hy / n) if n > 0 else (1.0, 0.0)
            sx = ox + rot2(obj.pose[2], hx, hy)[0] + out_dir[0] * sim.params.carry_standoff
            sy = oy + rot2(obj.pose[2], hx, hy)[1] + out_dir[1] * sim.params.carry_standoff
        else:
            hx, hy = sc.object_spec.handles[agent_idx]
            cx, cy = rot2(obj.pose[2], hx, hy)
            back = rot2(obj.pose[2], -1.0, 0.0)
            sx = ox + cx + back[0] * sim.params.push_standoff
            sy = oy + cy + back[1] * sim.params.push_standoff

        cx = g.k_station * (sx - agent.position[0])
        cy = g.k_station * (sy - agent.position[1])
        cn = math.hypot(cx, cy)
        if cn > g.station_cap:
            cx, cy = cx * g.station_cap / cn, cy * g.station_cap / cn
        vwx = v_obj[0] + cx
        vwy = v_obj[1] + cy
        vn = math.hypot(vwx, vwy)
        if vn > g.v_nominal_cap:
            vwx, vwy = vwx * g.v_nominal_cap / vn, vwy * g.v_nominal_cap / vn

        if math.hypot(wx - ox, wy - oy) > 1e-6:
            tangent = math.atan2(wy - oy, wx - ox)
        else:
            tangent = agent.yaw
        yaw_err = wrap_angle(tangent - agent.yaw)
        if sc.task_mode == "carry" and abs(yaw_err) > math.pi / 2.0:
            # carriers align their body axis with the path, never pirouette:
            # walking backward is as good as forward for a two-handed grasp
            yaw_err = wrap_angle(yaw_err + math.pi)
        bx, by = rot2(-agent.yaw, vwx, vwy)
        w_cap = min(0.3, emb.max_yaw_rate) if sc.task_mode == "carry" else emb.max_yaw_rate
        v_body = (
            clamp(bx, -emb.max_vx, emb.max_vx),
            clamp(by, -emb.max_vy, emb.max_vy),
            clamp(g.k_yaw * yaw_err, -w_cap, w_cap),
        )

    # pre-compensate the commanded body rotation: body-frame targets are taken
    # at the predicted mid-step yaw so the nominal's own yawing does not twist
    # the payload (the lag integral gives the effective yaw advance per tick)
    p = sim.params
    eff = p.dt_low - p.tau_track * (1.0 - math.exp(-p.dt_low / p.tau_track))
    yaw_pred = agent.yaw + 0.5 * v_body[2] * eff
    # yield under load: when the grip is already strained (someone is pinned),
    # stop commanding further pattern twist instead of wrenching the grasp open
    strained = False
    if sc.task_mode == "carry":
        for k in range(2):
            attach = sim.attach_world(obj, 2 * agent_idx + k)
            strained = strained or math.dist(agent.wrists[k], attach) > 0.6 * sim.params.r_break
    hold_anchors = None if (hold_position or strained) else anchors
    return TaskSpaceCommand(v_base=v_body, h_com=emb.com_height_default, alpha_ptc=0.0,
                            wrists=default_wrist_targets(state, agent_idx, sim,
                                                         yaw_pred=yaw_pred,
                                                         anchors=hold_anchors,
                                                         anchor_idx=anchor_idx))


def residual_map(action: np.ndarray, u_base: TaskSpaceCommand, cfg: RewardConfig, *,
                 sim: Simulator, agent_idx: int) -> TaskSpaceCommand:
    """u = u_base + M a, clamped to the embodiment bounds (wrist rows are the
    delta-p offsets added to the default wrist pose)."""
    a = np.asarray(action, dtype=float)
    if a.shape != (ACTION_DIM,):
        raise ValueError(f"action must have shape ({ACTION_DIM},), got {a.shape}")
    m = cfg.scaling
    emb = sim.scenario.embodiments[agent_idx]
    # plain-float construction: the world state must stay free of numpy
    # scalars so replay logs and wire messages serialize exactly
    v = (
        clamp(u_base.v_base[0] + m[0] * float(a[0]), -emb.max_vx, emb.max_vx),
        clamp(u_base.v_base[1] + m[1] * float(a[1]), -emb.max_vy, emb.max_vy),
        clamp(u_base.v_base[2] + m[2] * float(a[2]), -emb.max_yaw_rate, emb.max_yaw_rate),
    )
    h = clamp(u_base.h_com + m[3] * float(a[3]), emb.com_height_min, emb.com_height_max)
    alpha = clamp(u_base.alpha_ptc + m[4] * float(a[4]), -emb.pitch_range, emb.pitch_range)
    wl = tuple(u_base.wrists[0][d] + m[5 + d] * float(a[5 + d]) for d in range(3))
    wr = tuple(u_base.wrists[1][d] + m[8 + d] * float(a[8 + d]) for d in range(3))
    return TaskSpaceCommand(v_base=v, h_com=h, alpha_ptc=alpha, wrists=(wl, wr))


# ---------- shared team reward ----------

def polyline_deviation(pos: tuple[float, float], anchors: AnchorSequence) -> float:
    """Lateral distance from pos to the anchor polyline."""
    pts = anchors.anchors
    if len(pts) == 1:
        return math.hypot(pos[0] - pts[0][0], pos[1] - pts[0][1])
    best = float("inf")
    for a, b in zip(pts, pts[1:]):
        best = min(best, _point_seg(pos, a, b))
    return best


def _point_seg(p, a, b) -> float:
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    L2 = dx * dx + dy * dy
    if L2 <= 0.0:
        return math.hypot(p[0] - ax, p[1] - ay)
    t = clamp(((p[0] - ax) * dx + (p[1] - ay) * dy) / L2, 0.0, 1.0)
    return math.hypot(p[0] - (ax + t * dx), p[1] - (ay + t * dy))


def compute_reward(prev: WorldState, nxt: WorldState, anchors: AnchorSequence,
                   cfg: RewardConfig, task_mode: str, tracker: AnchorTracker
                   ) -> tuple[float, bool, bool]:
    """Shared scalar reward for one policy step; advances the tracker.

    Returns (reward, progress_gated, terminal_drop); the same value is handed
    to both agents.
    """
    wx, wy = tracker.current()
    px, py, _ = prev.object.pose
    nx, ny, _ = nxt.object.pose
    d_prev = math.hypot(px - wx, py - wy)
    d_next = math.hypot(nx - wx, ny - wy)
    progress = d_prev - d_next

    gated = polyline_deviation((nx, ny), anchors) > cfg.delta
    reward = 0.0 if gated else cfg.alpha * progress

    if task_mode == "carry":
        z = nxt.object.corner_heights
        zbar = sum(z) / 4.0
        reward -= cfg.beta * sum(abs(zj - zbar) for zj in z)

    terminal_drop = nxt.dropped and not prev.dropped
    if terminal_drop:
        reward -= cfg.gamma_drop

    tracker.advance((nx, ny))
    return reward, gated, terminal_drop
