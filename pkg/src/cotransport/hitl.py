"""Live human-in-the-loop sessions: a trained robot policy versus a human
partner over a single bidirectional message stream.

Transport "hitl_v1": length-prefixed UTF-8 JSON over a local TCP socket.  An
HTTP client on the same port is upgraded to a WebSocket carrying the same
JSON messages one per text frame (plain GETs serve the bundled browser
client).  The simulation loop never touches the socket: commands arrive
through a latch, outgoing state goes through a bounded queue that drops the
oldest frame on overflow.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import queue
import socket
import struct
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .env import EnvConfig, TransportEnv
from .evaluation import CheckpointPolicies, EpisodeMetrics, EpisodeTracker
from .mdp import ACTION_DIM
from .scenario import Scenario, scenario_to_dict
from .sim import suspension_tilt

HITL_SCHEMA = "hitl_v1"
WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

_MIME = {".html": "text/html", ".js": "text/javascript", ".css": "text/css",
         ".json": "application/json", ".map": "application/json", ".ico": "image/x-icon"}


class ProtocolError(RuntimeError):
    pass


# ---------- message streams ----------

class LengthPrefixedStream:
    """4-byte big-endian length + UTF-8 JSON payload per message."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._lock = threading.Lock()

    def send(self, msg: dict) -> None:
        payload = json.dumps(msg, separators=(",", ":")).encode()
        with self._lock:
            self.sock.sendall(struct.pack(">I", len(payload)) + payload)

    def recv(self) -> dict | None:
        header = _recv_exact(self.sock, 4)
        if header is None:
            return None
        (n,) = struct.unpack(">I", header)
        if n > 1 << 22:
            raise ProtocolError(f"frame of {n} bytes exceeds limit")
        payload = _recv_exact(self.sock, n)
        if payload is None:
            return None
        return json.loads(payload.decode())

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class WebSocketStream:
    """RFC6455 text frames, one JSON message per frame (server side)."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._lock = threading.Lock()

    def send(self, msg: dict) -> None:
        self._send_frame(0x1, json.dumps(msg, separators=(",", ":")).encode())

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        head = bytes([0x80 | opcode])
        n = len(payload)
        if n < 126:
            head += bytes([n])
        elif n < 1 << 16:
            head += bytes([126]) + struct.pack(">H", n)
        else:
            head += bytes([127]) + struct.pack(">Q", n)
        with self._lock:
            self.sock.sendall(head + payload)

    def recv(self) -> dict | None:
        while True:
            header = _recv_exact(self.sock, 2)
            if header is None:
                return None
            fin_op, len7 = header
            opcode = fin_op & 0x0F
            masked = bool(len7 & 0x80)
            n = len7 & 0x7F
            if n == 126:
                ext = _recv_exact(self.sock, 2)
                if ext is None:
                    return None
                (n,) = struct.unpack(">H", ext)
            elif n == 127:
                ext = _recv_exact(self.sock, 8)
                if ext is None:
                    return None
                (n,) = struct.unpack(">Q", ext)
            mask = b"\x00\x00\x00\x00"
            if masked:
                mask = _recv_exact(self.sock, 4)
                if mask is None:
                    return None
            payload = _recv_exact(self.sock, n) if n else b""
            if payload is None:
                return None
            if masked:
                payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
            if opcode == 0x1:
                return json.loads(payload.decode())
            if opcode == 0x8:      # close
                return None
            if opcode == 0x9:      # ping -> pong
                self._send_frame(0xA, payload)
                continue
            # ignore pong / continuation of control traffic

    def close(self) -> None:
        try:
            self._send_frame(0x8, b"")
        except OSError:
            pass
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        try:
            chunk = sock.recv(n - len(buf))
        except OSError:
            return None
        if not chunk:
            return None
        buf += chunk
    return buf


def websocket_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


# ---------- session server ----------

@dataclass
class SessionConfig:
    stale_ms: float = 500.0     # human command older than this decays to zeros
    state_hz: float = 25.0      # outgoing state frame rate (>= 20 required)
    time_scale: float = 1.0     # >1 runs faster than wall clock (tests)
    seed: int = 0
    start_jitter: float = 0.0
    queue_frames: int = 32
    human_agent: int = 1


@dataclass
class _Latch:
    action: np.ndarray = field(default_factory=lambda: np.zeros(ACTION_DIM))
    wallclock: float = -1e18
    seq: int = -1


class SessionServer:
    """One scenario, one robot checkpoint, one human client at a time."""

    def __init__(self, scenario: Scenario, policies: CheckpointPolicies, port: int,
                 cfg: SessionConfig | None = None, *, static_dir: str | Path | None = None,
                 log_path: str | Path | None = None):
        self.scenario = scenario
        self.policies = policies
        self.cfg = cfg or SessionConfig()
        self.env = TransportEnv(scenario, EnvConfig(start_jitter=self.cfg.start_jitter))
        self.static_dir = Path(static_dir) if static_dir else None
        self.log_path = Path(log_path) if log_path else None
        self._listener = socket.create_server(("127.0.0.1", port))
        self.port = self._listener.getsockname()[1]
        self._stream: LengthPrefixedStream | WebSocketStream | None = None
        self._stream_lock = threading.Lock()
        self._latch = _Latch()
        self._latch_lock = threading.Lock()
        self._events: queue.Queue[dict] = queue.Queue()
        self._state_q: queue.Queue[dict] = queue.Queue(maxsize=self.cfg.queue_frames)
        self._seq = 0
        self._paused = False
        self._shutdown = threading.Event()
        self._client_connected = threading.Event()
        self._episode_log: list[dict] = []
        self._session_stats = {"episodes": 0, "successes": 0}
        self.last_metrics: EpisodeMetrics | None = None
        self._pending_seed: int | None = None
        self._threads: list[threading.Thread] = []

    # -- lifecycle --

    def start(self) -> None:
        for fn in (self._accept_loop, self._sim_loop, self._send_loop):
            t = threading.Thread(target=fn, daemon=True)
            t.start()
            self._threads.append(t)

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._shutdown.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        self._shutdown.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._stream_lock:
            if self._stream is not None:
                self._stream.close()
                self._stream = None

    # -- network side --

    def _accept_loop(self) -> None:
        while not self._shutdown.is_set():
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            try:
                stream = self._handshake(sock)
            except (ProtocolError, OSError):
                sock.close()
                continue
            if stream is None:
                continue   # plain HTTP request already answered
            with self._stream_lock:
                if self._stream is not None:
                    stream.send({"type": "error", "seq": 0,
                                 "error": "session already has a client"})
                    stream.close()
                    continue
                self._stream = stream
            self._send(stream, {"type": "hello", "schema": HITL_SCHEMA,
                                "scenario": scenario_to_dict(self.scenario),
                                "dt_low": self.env.sim.params.dt_low})
            self._client_connected.set()
            threading.Thread(target=self._read_loop, args=(stream,), daemon=True).start()

    def _handshake(self, sock: socket.socket):
        """Sniff the first bytes: raw length-prefixed protocol, WebSocket
        upgrade, or a plain HTTP GET for the static client.  HTTP clients
        transmit immediately; a silent peer is a raw client awaiting hello."""
        sock.settimeout(0.35)
        try:
            first = sock.recv(4, socket.MSG_PEEK)
        except (socket.timeout, TimeoutError):
            sock.settimeout(None)
            return LengthPrefixedStream(sock)
        if not first:
            sock.close()
            return None
        sock.settimeout(5.0)
        if first[:4] not in (b"GET ", b"HEAD"):
            sock.settimeout(None)
            return LengthPrefixedStream(sock)
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                sock.close()
                return None
            data += chunk
            if len(data) > 1 << 16:
                raise ProtocolError("oversized HTTP header")
        headers = _parse_http(data)
        if headers.get("upgrade", "").lower() == "websocket":
            key = headers.get("sec-websocket-key")
            if not key:
                raise ProtocolError("missing Sec-WebSocket-Key")
            accept = websocket_accept_key(key)
            sock.sendall(
                b"HTTP/1.1 101 Switching Protocols\r\n"
                b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
                b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n")
            sock.settimeout(None)
            return WebSocketStream(sock)
        self._serve_static(sock, headers.get(":path", "/"))
        return None

    def _serve_static(self, sock: socket.socket, path: str) -> None:
        body = b"not found"
        status = "404 Not Found"
        ctype = "text/plain"
        if self.static_dir is not None:
            rel = path.split("?")[0].lstrip("/") or "index.html"
            target = (self.static_dir / rel).resolve()
            if target.is_file() and self.static_dir.resolve() in target.parents:
                body = target.read_bytes()
                status = "200 OK"
                ctype = _MIME.get(target.suffix, "application/octet-stream")
        head = (f"HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n")
        try:
            sock.sendall(head.encode() + body)
        finally:
            sock.close()

    def _read_loop(self, stream) -> None:
        try:
            while not self._shutdown.is_set():
                msg = stream.recv()
                if msg is None:
                    break
                self._handle_client(msg)
        except (ProtocolError, json.JSONDecodeError, OSError, UnicodeDecodeError):
            pass
        finally:
            with self._stream_lock:
                if self._stream is stream:
                    self._stream = None
                    self._client_connected.clear()
            stream.close()

    def _handle_client(self, msg: dict) -> None:
        kind = msg.get("type")
        if kind == "cmd":
            a = np.clip(np.asarray(msg.get("a", []), dtype=float), -1.0, 1.0)
            if a.shape != (ACTION_DIM,):
                raise ProtocolError(f"cmd must carry {ACTION_DIM} values")
            with self._latch_lock:
                self._latch = _Latch(action=a, wallclock=time.monotonic(),
                                     seq=int(msg.get("seq", -1)))
        elif kind in ("reset", "pause", "resume"):
            self._events.put(msg)
        else:
            raise ProtocolError(f"unknown client message {kind!r}")

    def _send(self, stream, msg: dict) -> None:
        self._seq += 1
        msg["seq"] = self._seq
        try:
            stream.send(msg)
        except OSError:
            pass

    def _send_loop(self) -> None:
        while not self._shutdown.is_set():
            try:
                due, msg = self._state_q.get(timeout=0.1)
            except queue.Empty:
                continue
            delay = due - time.monotonic()
            if delay > 0:
                time.sleep(min(delay, 0.2))
            with self._stream_lock:
                stream = self._stream
            if stream is not None:
                self._send(stream, msg)

    def _enqueue_state(self, msg: dict, due: float | None = None) -> None:
        # overflow drops the oldest state frame, never a command
        item = (due if due is not None else time.monotonic(), msg)
        while True:
            try:
                self._state_q.put_nowait(item)
                return
            except queue.Full:
                try:
                    self._state_q.get_nowait()
                except queue.Empty:
                    pass

    # -- simulation side --

    def _human_action(self, now: float) -> np.ndarray:
        with self._latch_lock:
            latch = self._latch
        if (now - latch.wallclock) * 1000.0 > self.cfg.stale_ms:
            return np.zeros(ACTION_DIM)
        return latch.action.copy()

    def _sim_loop(self) -> None:
        cfg = self.cfg
        dt_wall = self.env.sim.params.dt_low / cfg.time_scale
        frames_per_step = max(1, int(self.env.sim.params.f_high // cfg.state_hz))
        seed = cfg.seed
        while not self._shutdown.is_set():
            # hold at reset until a client drives the session
            self._client_connected.wait(timeout=0.2)
            if not self._client_connected.is_set():
                continue
            obs = self.env.reset(seed)
            tracker = EpisodeTracker(self.env)
            self._episode_log = [{"type": "session", "schema": HITL_SCHEMA,
                                  "scenario": self.scenario.id, "seed": seed}]
            step = 0
            next_tick = time.monotonic()
            done = False
            info: dict = {}
            while not done and not self._shutdown.is_set():
                if not self._client_connected.is_set():
                    break   # client left mid-episode; hold and restart on reconnect
                event = self._drain_events()
                if event == "reset":
                    break
                if self._paused:
                    time.sleep(0.02)
                    next_tick = time.monotonic()
                    continue
                now = time.monotonic()
                if now < next_tick:
                    time.sleep(min(next_tick - now, 0.05))
                    continue
                next_tick += dt_wall
                human_a = self._human_action(now)
                robot_a = self.policies.act(1 - cfg.human_agent, obs[1 - cfg.human_agent])
                acts = [np.zeros(ACTION_DIM), np.zeros(ACTION_DIM)]
                acts[cfg.human_agent] = human_a
                acts[1 - cfg.human_agent] = robot_a
                self._episode_log.append({"type": "applied", "step": step,
                                          "a": [float(v) for v in human_a]})
                tick_start = next_tick - dt_wall
                obs, reward, done, info = self.env.step(acts, record_substates=True)
                tracker.update()
                step += 1
                # stream decimated substep snapshots spread across the tick so
                # the client sees >= state_hz frames per second
                frames = info["substates"][frames_per_step - 1::frames_per_step]
                if frames:
                    spacing = dt_wall / len(frames)
                    for k, snap in enumerate(frames):
                        self._enqueue_state(self._state_message(snap, step, tracker),
                                            due=tick_start + (k + 1) * spacing)
            if done:
                metrics = tracker.finalize(info)
                self.last_metrics = metrics
                self._session_stats["episodes"] += 1
                self._session_stats["successes"] += int(metrics.success)
                self._enqueue_state({"type": "end", "result": asdict(metrics),
                                     "session": dict(self._session_stats)})
                if self.log_path is not None:
                    with self.log_path.open("a") as f:
                        for rec in self._episode_log:
                            f.write(json.dumps(rec) + "\n")
                seed = self._await_reset(seed)
            elif self._pending_seed is not None:
                seed = self._pending_seed
                self._pending_seed = None

    def _drain_events(self) -> str | None:
        result = None
        while True:
            try:
                msg = self._events.get_nowait()
            except queue.Empty:
                return result
            kind = msg["type"]
            if kind == "pause":
                self._paused = True
            elif kind == "resume":
                self._paused = False
            elif kind == "reset":
                self._pending_seed = int(msg.get("seed", self.cfg.seed))
                result = "reset"

    def _await_reset(self, seed: int) -> int:
        while not self._shutdown.is_set():
            if self._drain_events() == "reset":
                s = self._pending_seed
                self._pending_seed = None
                return s
            time.sleep(0.02)
        return seed

    def _state_message(self, w, step: int, tracker: EpisodeTracker) -> dict:
        rays = [self.env.sim.raycast(w, i, self.env.cfg.n_rays, self.env.cfg.d_max)
                for i in range(2)]
        tilt = (math.degrees(suspension_tilt(w.object, self.scenario))
                if self.scenario.task_mode == "carry" else None)
        msg = {
            "type": "state",
            "t": w.time,
            "step": step,
            "agents": [{
                "position": [float(v) for v in a.position],
                "yaw": float(a.yaw), "com_height": float(a.com_height),
                "wrists": [[float(v) for v in x] for x in a.wrists],
            } for a in w.agents],
            "object": {"pose": [float(v) for v in w.object.pose],
                       "corner_heights": [float(v) for v in w.object.corner_heights],
                       "com_height": float(w.object.com_height)},
            "contacts": [bool(c) for c in w.contacts],
            "dropped": bool(w.dropped),
            "anchors": [list(a) for a in self.env.anchors.anchors],
            "anchor_idx": self.env.tracker.index,
            "rays": [[float(v) for v in r] for r in rays],
            "metrics": {"time": w.time, "tilt_deg": tilt,
                        "tilt_rate": tracker.tilt_rate(),
                        "deviation_max": tracker.dev_max,
                        "session": dict(self._session_stats)},
        }
        return msg


# ---------- offline replay of a recorded session ----------

def replay_command_log(scenario: Scenario, policies: CheckpointPolicies,
                       log_path: str | Path, *, human_agent: int = 1,
                       start_jitter: float = 0.0) -> EpisodeMetrics:
    """Re-run a logged session offline; identical logs give identical metrics."""
    records = [json.loads(line) for line in Path(log_path).read_text().splitlines() if line]
    header = records[0]
    if header.get("type") != "session" or header.get("schema") != HITL_SCHEMA:
        raise ProtocolError(f"not a {HITL_SCHEMA} command log: {log_path}")
    applied = {r["step"]: np.asarray(r["a"], dtype=float)
               for r in records if r.get("type") == "applied"}
    env = TransportEnv(scenario, EnvConfig(start_jitter=start_jitter))
    obs = env.reset(int(header["seed"]))
    tracker = EpisodeTracker(env)
    step = 0
    while True:
        robot_a = policies.act(1 - human_agent, obs[1 - human_agent])
        human_a = applied.get(step, np.zeros(ACTION_DIM))
        acts = [None, None]
        acts[human_agent] = human_a
        acts[1 - human_agent] = robot_a
        obs, reward, done, info = env.step(acts)
        tracker.update()
        step += 1
        if done:
            return tracker.finalize(info)
        if step > env.scenario.episode_horizon + 1:
            raise ProtocolError("command log never reaches an episode end")


def _parse_http(data: bytes) -> dict:
    text = data.decode("latin-1")
    lines = text.split("\r\n")
    out: dict = {}
    if lines and " " in lines[0]:
        parts = lines[0].split(" ")
        if len(parts) >= 2:
            out[":path"] = parts[1]
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            out[k.strip().lower()] = v.strip()
    return out
