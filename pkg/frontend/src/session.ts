/** Client session state machine: connecting -> live <-> paused -> ended.
 *
 * Only the latest state message is retained (no backlog); everything the
 * renderer needs is derived from the last hello + last state. */

import {
  EndMessage,
  HelloMessage,
  HITL_SCHEMA,
  ScenarioInfo,
  ServerMessage,
  StateMessage,
} from "./protocol.js";

export type Phase = "connecting" | "live" | "paused" | "ended" | "error";

export interface SessionEvents {
  onPhase?: (phase: Phase, detail?: string) => void;
}

export class ClientSession {
  phase: Phase = "connecting";
  scenario: ScenarioInfo | null = null;
  dtLow = 0.5;
  latestState: StateMessage | null = null;
  lastEnd: EndMessage | null = null;
  errorBanner: string | null = null;
  droppedFrames = 0;
  decodeErrors = 0;
  private lastSeq = -1;
  private events: SessionEvents;

  constructor(events: SessionEvents = {}) {
    this.events = events;
  }

  private setPhase(phase: Phase, detail?: string): void {
    this.phase = phase;
    this.events.onPhase?.(phase, detail);
  }

  /** Feed one parsed server message; stale (out-of-order) states are dropped. */
  handle(msg: ServerMessage): void {
    if (msg.seq <= this.lastSeq && msg.type === "state") {
      this.droppedFrames += 1;
      return;
    }
    this.lastSeq = Math.max(this.lastSeq, msg.seq);
    switch (msg.type) {
      case "hello":
        if (msg.schema !== HITL_SCHEMA) {
          this.errorBanner = `server speaks ${msg.schema}, client needs ${HITL_SCHEMA}`;
          this.setPhase("error", this.errorBanner);
          return;
        }
        this.scenario = msg.scenario;
        this.dtLow = msg.dt_low;
        this.lastEnd = null;
        this.setPhase("live");
        return;
      case "state":
        if (this.phase === "live" || this.phase === "paused") {
          this.latestState = msg;   // latest wins, never queued
        }
        return;
      case "end":
        this.lastEnd = msg;
        this.setPhase("ended");
        return;
      case "error":
        this.errorBanner = msg.error;
        this.setPhase("error", msg.error);
        return;
    }
  }

  markDecodeError(): void {
    this.decodeErrors += 1;
  }

  pause(): void {
    if (this.phase === "live") this.setPhase("paused");
  }

  resume(): void {
    if (this.phase === "paused") this.setPhase("live");
  }

  /** Episode restarted after an end message. */
  restarted(): void {
    if (this.phase === "ended") this.setPhase("live");
  }

  disconnected(): void {
    if (this.phase !== "error") this.setPhase("ended", "disconnected");
  }

  canSendCommands(): boolean {
    return this.phase === "live";
  }
}
