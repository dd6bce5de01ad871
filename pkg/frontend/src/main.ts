/** Browser wiring: WebSocket to the session server, keyboard capture, and a
 * requestAnimationFrame render loop over the latest state. */

import { CommandPump, DEFAULT_PROFILE, InputProfile, InputState } from "./input.js";
import { encodeCmd, encodePause, encodeReset, parseServerMessage } from "./protocol.js";
import { Ctx2D, fitCamera, hudFromState, renderHud, renderScene } from "./render.js";
import { ClientSession } from "./session.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function startClient(url: string, profile: InputProfile = DEFAULT_PROFILE): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const banner = el<HTMLDivElement>("banner");
  const ctx = canvas.getContext("2d") as unknown as Ctx2D;
  const session = new ClientSession({
    onPhase: (phase, detail) => {
      banner.textContent = phase === "error" ? `error: ${detail}` :
        phase === "ended" ? "episode ended - press Enter to reset" : "";
      banner.style.display = phase === "error" || phase === "ended" ? "block" : "none";
    },
  });

  let seq = 0;
  const ws = new WebSocket(url);
  ws.onmessage = (ev) => {
    try {
      session.handle(parseServerMessage(String(ev.data)));
    } catch {
      session.markDecodeError();
    }
  };
  ws.onclose = () => session.disconnected();
  ws.onerror = () => session.disconnected();

  const input = new InputState();
  const pump = new CommandPump(input, (a) => {
    if (session.canSendCommands() && ws.readyState === WebSocket.OPEN) {
      ws.send(encodeCmd(++seq, a));
    }
  }, profile);
  pump.start();

  window.addEventListener("keydown", (ev) => {
    if (ev.code === "Enter") {
      ws.send(encodeReset(++seq, Math.floor(Math.random() * 1e6)));
      session.restarted();
      return;
    }
    if (ev.code === "Space") {
      const pausing = session.phase === "live";
      ws.send(encodePause(++seq, pausing));
      if (pausing) session.pause();
      else session.resume();
      ev.preventDefault();
      return;
    }
    input.keyDown(ev.code);
  });
  window.addEventListener("keyup", (ev) => input.keyUp(ev.code));
  window.addEventListener("blur", () => input.clear());

  const frame = () => {
    if (session.scenario && session.latestState) {
      const cam = fitCamera(session.scenario, canvas.width, canvas.height);
      renderScene(ctx, cam, session.scenario, session.latestState);
      const hud = hudFromState(session.latestState, session.phase);
      hud.goalBanner = session.lastEnd?.result.success === true && session.phase === "ended";
      renderHud(ctx, hud);
    }
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

declare global {
  interface Window {
    startClient: typeof startClient;
  }
}

if (typeof window !== "undefined") {
  window.startClient = startClient;
}
