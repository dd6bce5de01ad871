/** hitl_v1 wire messages: one JSON object per WebSocket text frame. */

export const HITL_SCHEMA = "hitl_v1";
export const ACTION_DIM = 11;

export interface ScenarioInfo {
  id: string;
  task_mode: "push" | "carry";
  walls: [number, number, number, number][];
  object_spec: { length: number; width: number };
  start_pose: [number, number, number];
  goal_center: [number, number];
  goal_radius: number;
}

export interface AgentView {
  position: [number, number];
  yaw: number;
  com_height: number;
  wrists: [number, number, number][];
}

export interface StateMessage {
  type: "state";
  seq: number;
  t: number;
  step: number;
  agents: AgentView[];
  object: { pose: [number, number, number]; corner_heights: number[]; com_height: number };
  contacts: boolean[];
  dropped: boolean;
  anchors: [number, number][];
  anchor_idx: number;
  rays: number[][];
  metrics: {
    time: number;
    tilt_deg: number | null;
    tilt_rate: number | null;
    deviation_max: number;
    session: { episodes: number; successes: number };
  };
}

export interface HelloMessage {
  type: "hello";
  seq: number;
  schema: string;
  scenario: ScenarioInfo;
  dt_low: number;
}

export interface EndMessage {
  type: "end";
  seq: number;
  result: {
    success: boolean;
    gamma_time: number | null;
    tilt_rate: number | null;
    drop: boolean;
    timeout: boolean;
  };
  session: { episodes: number; successes: number };
}

export interface ErrorMessage {
  type: "error";
  seq: number;
  error: string;
}

export type ServerMessage = HelloMessage | StateMessage | EndMessage | ErrorMessage;

export interface CmdMessage {
  type: "cmd";
  seq: number;
  a: number[];
}

export class ProtocolError extends Error {}

/** Parse and structurally validate one server frame. */
export function parseServerMessage(raw: string): ServerMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch {
    throw new ProtocolError("frame is not JSON");
  }
  if (typeof data !== "object" || data === null) {
    throw new ProtocolError("frame is not an object");
  }
  const msg = data as Record<string, unknown>;
  if (typeof msg.type !== "string" || typeof msg.seq !== "number") {
    throw new ProtocolError("missing type/seq");
  }
  switch (msg.type) {
    case "hello":
      if (typeof msg.schema !== "string" || typeof msg.scenario !== "object") {
        throw new ProtocolError("malformed hello");
      }
      return msg as unknown as HelloMessage;
    case "state":
      if (!Array.isArray(msg.agents) || typeof msg.object !== "object") {
        throw new ProtocolError("malformed state");
      }
      return msg as unknown as StateMessage;
    case "end":
      if (typeof msg.result !== "object") {
        throw new ProtocolError("malformed end");
      }
      return msg as unknown as EndMessage;
    case "error":
      return msg as unknown as ErrorMessage;
    default:
      throw new ProtocolError(`unknown message type ${String(msg.type)}`);
  }
}

export function clampAction(a: number[]): number[] {
  const out = new Array<number>(ACTION_DIM).fill(0);
  for (let i = 0; i < ACTION_DIM; i++) {
    const v = a[i] ?? 0;
    out[i] = Math.max(-1, Math.min(1, v));
  }
  return out;
}

export function encodeCmd(seq: number, a: number[]): string {
  const msg: CmdMessage = { type: "cmd", seq, a: clampAction(a) };
  return JSON.stringify(msg);
}

export function encodeReset(seq: number, seed: number): string {
  return JSON.stringify({ type: "reset", seq, seed });
}

export function encodePause(seq: number, paused: boolean): string {
  return JSON.stringify({ type: paused ? "pause" : "resume", seq });
}
