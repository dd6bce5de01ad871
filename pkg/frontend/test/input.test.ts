import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";
import { CommandPump, DEFAULT_PROFILE, InputState, inputToCmd } from "../src/input.js";
import { ACTION_DIM } from "../src/protocol.js";

describe("input mapping", () => {
  it("no keys -> zero command", () => {
    expect(inputToCmd(new InputState())).toEqual(new Array(ACTION_DIM).fill(0));
  });

  it("forward key -> vx +1, everything else 0", () => {
    const input = new InputState();
    input.keyDown(DEFAULT_PROFILE.forward);
    const a = inputToCmd(input);
    expect(a[0]).toBe(1);
    expect(a.slice(1)).toEqual(new Array(ACTION_DIM - 1).fill(0));
  });

  it("forward+left stays at unit max-norm (1, 1)", () => {
    const input = new InputState();
    input.keyDown(DEFAULT_PROFILE.forward);
    input.keyDown(DEFAULT_PROFILE.left);
    const a = inputToCmd(input);
    expect(a[0]).toBe(1);
    expect(a[1]).toBe(1);
    expect(Math.max(...a.map(Math.abs))).toBe(1);
  });

  it("opposed keys cancel; grip drives both wrist z rows", () => {
    const input = new InputState();
    input.keyDown(DEFAULT_PROFILE.forward);
    input.keyDown(DEFAULT_PROFILE.back);
    input.keyDown(DEFAULT_PROFILE.gripUp);
    const a = inputToCmd(input);
    expect(a[0]).toBe(0);
    expect(a[7]).toBe(1);
    expect(a[10]).toBe(1);
  });
});

describe("command pump", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("emits at most 30 commands per second", () => {
    const input = new InputState();
    const sent: number[][] = [];
    let clock = 0;
    const pump = new CommandPump(input, (a) => sent.push(a), DEFAULT_PROFILE, 30, () => clock);
    pump.start();
    for (let i = 0; i < 100; i++) {
      clock += 10;                       // 10 ms wall steps
      vi.advanceTimersByTime(10);
    }
    pump.stop();
    expect(sent.length).toBeLessThanOrEqual(31);   // 1 s of traffic at 30 Hz
    expect(sent.length).toBeGreaterThanOrEqual(28);
  });

  it("key event to enqueued command stays within the 50 ms budget", () => {
    const input = new InputState();
    const stamps: { at: number; a: number[] }[] = [];
    let clock = 0;
    const pump = new CommandPump(input, (a) => stamps.push({ at: clock, a }),
                                 DEFAULT_PROFILE, 30, () => clock);
    pump.start();
    clock += 7;
    vi.advanceTimersByTime(7);
    const pressedAt = clock;
    input.keyDown(DEFAULT_PROFILE.forward);   // synthetic key event
    for (let i = 0; i < 10 && !stamps.some((s) => s.a[0] === 1); i++) {
      clock += 10;
      vi.advanceTimersByTime(10);
    }
    const first = stamps.find((s) => s.a[0] === 1);
    expect(first).toBeDefined();
    expect(first!.at - pressedAt).toBeLessThanOrEqual(50);
    pump.stop();
  });
});
