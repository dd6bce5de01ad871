import { describe, expect, it } from "vitest";
import {
  ACTION_DIM,
  clampAction,
  encodeCmd,
  parseServerMessage,
  ProtocolError,
} from "../src/protocol.js";

describe("protocol", () => {
  it("parses a hello frame", () => {
    const msg = parseServerMessage(JSON.stringify({
      type: "hello", seq: 1, schema: "hitl_v1",
      scenario: { id: "S21", walls: [] }, dt_low: 0.5,
    }));
    expect(msg.type).toBe("hello");
  });

  it("rejects non-JSON and unknown types", () => {
    expect(() => parseServerMessage("nope")).toThrow(ProtocolError);
    expect(() => parseServerMessage(JSON.stringify({ type: "warp", seq: 2 }))).toThrow(ProtocolError);
    expect(() => parseServerMessage(JSON.stringify({ type: "state", seq: "x" }))).toThrow(ProtocolError);
  });

  it("clamps command values into [-1, 1] and pads to 11 dims", () => {
    const a = clampAction([5, -7, 0.25]);
    expect(a).toHaveLength(ACTION_DIM);
    expect(a[0]).toBe(1);
    expect(a[1]).toBe(-1);
    expect(a[2]).toBe(0.25);
    expect(a[10]).toBe(0);
  });

  it("encodes cmd frames with a sequence number", () => {
    const raw = JSON.parse(encodeCmd(7, new Array(ACTION_DIM).fill(0.5)));
    expect(raw.type).toBe("cmd");
    expect(raw.seq).toBe(7);
    expect(raw.a).toHaveLength(ACTION_DIM);
  });
});
