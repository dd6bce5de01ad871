/** Immediate-mode top-down rendering of the latest state message.
 *
 * Everything drawn derives from wire content plus the scenario scale; there
 * is no client-side physics.  Legend: cyan ray fans, green current anchor,
 * dimmed upcoming anchors, payload rectangle tinted by tilt.
 */

import { ScenarioInfo, StateMessage } from "./protocol.js";

/** Subset of CanvasRenderingContext2D the renderer needs (stubable in tests). */
export interface Ctx2D {
  canvas: { width: number; height: number };
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  globalAlpha: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  rect(x: number, y: number, w: number, h: number): void;
  fill(): void;
  stroke(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  save(): void;
  restore(): void;
  translate(x: number, y: number): void;
  rotate(r: number): void;
}

export interface Camera {
  scale: number;   // px per meter
  ox: number;      // world origin -> screen offset
  oy: number;
}

export function fitCamera(scenario: ScenarioInfo, width: number, height: number): Camera {
  let xmin = Infinity, ymin = Infinity, xmax = -Infinity, ymax = -Infinity;
  const extend = (x: number, y: number) => {
    xmin = Math.min(xmin, x); xmax = Math.max(xmax, x);
    ymin = Math.min(ymin, y); ymax = Math.max(ymax, y);
  };
  for (const [x0, y0, x1, y1] of scenario.walls) {
    extend(x0, y0);
    extend(x1, y1);
  }
  extend(scenario.start_pose[0], scenario.start_pose[1]);
  extend(scenario.goal_center[0] - scenario.goal_radius, scenario.goal_center[1] - scenario.goal_radius);
  extend(scenario.goal_center[0] + scenario.goal_radius, scenario.goal_center[1] + scenario.goal_radius);
  const margin = 1.2;
  xmin -= margin; ymin -= margin; xmax += margin; ymax += margin;
  const scale = Math.min(width / (xmax - xmin), height / (ymax - ymin));
  return {
    scale,
    ox: -xmin * scale + (width - (xmax - xmin) * scale) / 2,
    oy: ymax * scale + (height - (ymax - ymin) * scale) / 2,
  };
}

const COLORS = {
  background: "#10141a",
  wall: "#aab4c0",
  goal: "#2e7d4f",
  anchorCurrent: "#38e06c",   // the green dot
  anchorUpcoming: "#2a6b44",
  ray: "#27c4d4",             // cyan fan
  agent0: "#5b9bd5",
  agent1: "#e8a33d",
  payload: "#c9cdd4",
  payloadTilted: "#e05353",
  hud: "#dfe4ea",
  banner: "#ff5f5f",
};

function toScreen(cam: Camera, x: number, y: number): [number, number] {
  return [cam.ox + x * cam.scale, cam.oy - y * cam.scale];
}

export function renderScene(ctx: Ctx2D, cam: Camera, scenario: ScenarioInfo,
                            state: StateMessage): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = COLORS.background;
  ctx.fillRect(0, 0, width, height);

  // goal disc
  ctx.globalAlpha = 0.35;
  ctx.fillStyle = COLORS.goal;
  const [gx, gy] = toScreen(cam, scenario.goal_center[0], scenario.goal_center[1]);
  ctx.beginPath();
  ctx.arc(gx, gy, scenario.goal_radius * cam.scale, 0, Math.PI * 2);
  ctx.fill();
  ctx.globalAlpha = 1;

  // ray fans under everything else
  ctx.strokeStyle = COLORS.ray;
  ctx.globalAlpha = 0.25;
  ctx.lineWidth = 1;
  state.rays.forEach((fan, i) => {
    const agent = state.agents[i];
    if (!agent) return;
    const [ax, ay] = agent.position;
    fan.forEach((d, j) => {
      const ang = agent.yaw + (2 * Math.PI * j) / fan.length;
      const [sx, sy] = toScreen(cam, ax, ay);
      const [ex, ey] = toScreen(cam, ax + d * Math.cos(ang), ay + d * Math.sin(ang));
      ctx.beginPath();
      ctx.moveTo(sx, sy);
      ctx.lineTo(ex, ey);
      ctx.stroke();
    });
  });
  ctx.globalAlpha = 1;

  // walls
  ctx.strokeStyle = COLORS.wall;
  ctx.lineWidth = 3;
  for (const [x0, y0, x1, y1] of scenario.walls) {
    const [sx, sy] = toScreen(cam, x0, y0);
    const [ex, ey] = toScreen(cam, x1, y1);
    ctx.beginPath();
    ctx.moveTo(sx, sy);
    ctx.lineTo(ex, ey);
    ctx.stroke();
  }

  // anchors: upcoming dimmed, current highlighted green
  state.anchors.forEach(([x, y], k) => {
    const [sx, sy] = toScreen(cam, x, y);
    ctx.fillStyle = k === state.anchor_idx ? COLORS.anchorCurrent : COLORS.anchorUpcoming;
    ctx.beginPath();
    ctx.arc(sx, sy, k === state.anchor_idx ? 6 : 3.5, 0, Math.PI * 2);
    ctx.fill();
  });

  // payload rectangle, tinted by tilt spread
  const [ox, oy, heading] = state.object.pose;
  const zs = state.object.corner_heights;
  const zbar = zs.reduce((s, z) => s + z, 0) / zs.length;
  const tiltSpread = zs.reduce((s, z) => s + Math.abs(z - zbar), 0);
  const [px, py] = toScreen(cam, ox, oy);
  ctx.save();
  ctx.translate(px, py);
  ctx.rotate(-heading);
  ctx.fillStyle = tiltSpread > 0.08 ? COLORS.payloadTilted : COLORS.payload;
  const L = scenario.object_spec.length * cam.scale;
  const W = scenario.object_spec.width * cam.scale;
  ctx.globalAlpha = state.dropped ? 0.4 : 0.9;
  ctx.beginPath();
  ctx.rect(-L / 2, -W / 2, L, W);
  ctx.fill();
  ctx.restore();
  ctx.globalAlpha = 1;

  // agents with yaw markers and wrist dots
  state.agents.forEach((agent, i) => {
    const [sx, sy] = toScreen(cam, agent.position[0], agent.position[1]);
    ctx.fillStyle = i === 0 ? COLORS.agent0 : COLORS.agent1;
    ctx.beginPath();
    ctx.arc(sx, sy, 0.25 * cam.scale, 0, Math.PI * 2);
    ctx.fill();
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 2;
    const [hx, hy] = toScreen(
      cam,
      agent.position[0] + 0.3 * Math.cos(agent.yaw),
      agent.position[1] + 0.3 * Math.sin(agent.yaw),
    );
    ctx.beginPath();
    ctx.moveTo(sx, sy);
    ctx.lineTo(hx, hy);
    ctx.stroke();
    for (const [wx, wy] of agent.wrists.map((w) => toScreen(cam, w[0], w[1]))) {
      ctx.beginPath();
      ctx.arc(wx, wy, 3, 0, Math.PI * 2);
      ctx.fill();
    }
  });
}

export interface HudModel {
  t: number;
  gammaSoFar: number;
  tiltRate: number | null;
  contacts: boolean[];
  dropped: boolean;
  goalBanner: boolean;
  sessionSr: string;
  phase: string;
}

export function hudFromState(state: StateMessage, phase: string): HudModel {
  const s = state.metrics.session;
  return {
    t: state.t,
    gammaSoFar: state.metrics.time,
    tiltRate: state.metrics.tilt_rate,
    contacts: state.contacts,
    dropped: state.dropped,
    goalBanner: false,
    sessionSr: s.episodes > 0 ? `${s.successes}/${s.episodes}` : "-",
    phase,
  };
}

export function renderHud(ctx: Ctx2D, hud: HudModel): void {
  ctx.fillStyle = COLORS.hud;
  ctx.font = "13px monospace";
  const tilt = hud.tiltRate === null ? "n/a" : `${hud.tiltRate.toFixed(2)} deg/s`;
  const grips = hud.contacts.map((c) => (c ? "#" : ".")).join("");
  ctx.fillText(`t ${hud.t.toFixed(1)}s   G ${hud.gammaSoFar.toFixed(1)}s   tilt ${tilt}`, 12, 20);
  ctx.fillText(`grips ${grips}   session SR ${hud.sessionSr}   [${hud.phase}]`, 12, 38);
  if (hud.dropped) {
    ctx.fillStyle = COLORS.banner;
    ctx.font = "28px monospace";
    ctx.fillText("PAYLOAD DROPPED", 12, 72);
  }
  if (hud.goalBanner) {
    ctx.fillStyle = COLORS.anchorCurrent;
    ctx.font = "28px monospace";
    ctx.fillText("GOAL REACHED", 12, 72);
  }
}
