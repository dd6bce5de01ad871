/** Keyboard state -> 11-dim partner command.
 *
 * The reduction lives client-side: directional keys drive the planar
 * velocity residual, turn keys the yaw-rate residual, grip keys nudge the
 * wrist height; every other action dimension stays zero.  Diagonals are
 * normalized to unit max-norm (each component clamped to [-1, 1]).  The
 * sampler emits at most `maxHz` commands per second.
 */

import { ACTION_DIM, clampAction } from "./protocol.js";

export interface InputProfile {
  forward: string;
  back: string;
  left: string;
  right: string;
  turnLeft: string;
  turnRight: string;
  gripUp: string;
  gripDown: string;
}

export const DEFAULT_PROFILE: InputProfile = {
  forward: "KeyW",
  back: "KeyS",
  left: "KeyA",
  right: "KeyD",
  turnLeft: "KeyQ",
  turnRight: "KeyE",
  gripUp: "KeyR",
  gripDown: "KeyF",
};

// action vector rows (see the generated layout schema)
const ROW_VX = 0;
const ROW_VY = 1;
const ROW_YAW = 2;
const ROW_WRIST_L_Z = 7;
const ROW_WRIST_R_Z = 10;

export class InputState {
  private pressed = new Set<string>();

  keyDown(code: string): void {
    this.pressed.add(code);
  }

  keyUp(code: string): void {
    this.pressed.delete(code);
  }

  clear(): void {
    this.pressed.clear();
  }

  isDown(code: string): boolean {
    return this.pressed.has(code);
  }
}

export function inputToCmd(input: InputState, profile: InputProfile = DEFAULT_PROFILE): number[] {
  const a = new Array<number>(ACTION_DIM).fill(0);
  const axis = (pos: string, neg: string): number =>
    (input.isDown(pos) ? 1 : 0) - (input.isDown(neg) ? 1 : 0);
  a[ROW_VX] = axis(profile.forward, profile.back);
  a[ROW_VY] = axis(profile.left, profile.right);
  a[ROW_YAW] = axis(profile.turnLeft, profile.turnRight);
  const grip = axis(profile.gripUp, profile.gripDown);
  a[ROW_WRIST_L_Z] = grip;
  a[ROW_WRIST_R_Z] = grip;
  return clampAction(a);
}

/** Rate-limited command pump: samples the input and hands the command to
 * `send` at most every `1000 / maxHz` ms.  Decoupled from the render loop so
 * key-to-command latency stays below one sample interval. */
export class CommandPump {
  readonly intervalMs: number;
  private timer: ReturnType<typeof setInterval> | null = null;
  lastSentAt = -Infinity;

  constructor(
    private input: InputState,
    private send: (a: number[]) => void,
    private profile: InputProfile = DEFAULT_PROFILE,
    maxHz = 30,
    private now: () => number = () => performance.now(),
  ) {
    this.intervalMs = 1000 / maxHz;
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.tick(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  tick(): void {
    const t = this.now();
    // ceiling guard only: absorb timer jitter without skipping whole periods
    if (t - this.lastSentAt < this.intervalMs * 0.8) return;
    this.lastSentAt = t;
    this.send(inputToCmd(this.input, this.profile));
  }
}
