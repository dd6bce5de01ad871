"""Session server: wire protocol, pacing rules, command latching, replays."""

from __future__ import annotations

import json
import socket
import struct
import threading
import time

import numpy as np
import pytest

from cotransport.evaluation import CheckpointPolicies, run_episode
from cotransport.env import EnvConfig
from cotransport.hitl import (
    HITL_SCHEMA,
    LengthPrefixedStream,
    SessionConfig,
    SessionServer,
    WebSocketStream,
    replay_command_log,
    websocket_accept_key,
)
from cotransport.mdp import ACTION_DIM
from cotransport.scenario import builtin_scenario
from cotransport.training import TrainConfig, Trainer


@pytest.fixture(scope="module")
def ckpt_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("hitl_ckpt")
    Trainer(TrainConfig(scenario_id="C1", n_envs=2, horizon=8, total_steps=10_000,
                        seed=0)).save(out)
    return out


@pytest.fixture()
def server(ckpt_dir, tmp_path):
    policies = CheckpointPolicies.from_dir(ckpt_dir)
    srv = SessionServer(builtin_scenario("C1"), policies, port=0,
                        cfg=SessionConfig(time_scale=25.0, seed=5, start_jitter=0.0),
                        log_path=tmp_path / "log.jsonl")
    srv.start()
    yield srv
    srv.shutdown()


class SyncClient:
    """Test client over the raw length-prefixed transport."""

    def __init__(self, port: int):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=5.0)
        self.stream = LengthPrefixedStream(self.sock)
        self.seq = 0

    def send(self, msg: dict) -> None:
        self.seq += 1
        msg["seq"] = self.seq
        self.stream.send(msg)

    def recv(self, want: str, timeout: float = 10.0) -> dict:
        deadline = time.monotonic() + timeout
        self.sock.settimeout(timeout)
        while time.monotonic() < deadline:
            msg = self.stream.recv()
            if msg is None:
                raise AssertionError("connection closed early")
            if msg["type"] == want:
                return msg
        raise AssertionError(f"no {want!r} within {timeout}s")

    def close(self):
        self.stream.close()


def test_websocket_accept_vector():
    # the worked example from RFC 6455 section 1.3
    assert websocket_accept_key("dGhlIHNhbXBsZSBub25jZQ==") == "s3pPLMBiTxaQ9kYGzzhZRbK+xOo="


def test_length_prefixed_round_trip():
    a, b = socket.socketpair()
    sa, sb = LengthPrefixedStream(a), LengthPrefixedStream(b)
    sa.send({"type": "cmd", "a": [0.0] * ACTION_DIM, "seq": 1})
    msg = sb.recv()
    assert msg["type"] == "cmd" and len(msg["a"]) == ACTION_DIM
    a.close()
    b.close()


def test_websocket_frame_codec():
    a, b = socket.socketpair()
    ws = WebSocketStream(a)
    ws.send({"type": "hello", "seq": 1})
    header = b.recv(2)
    assert header[0] == 0x81            # FIN + text
    n = header[1] & 0x7F
    payload = b.recv(n)
    assert json.loads(payload)["type"] == "hello"
    # client -> server must be masked
    body = json.dumps({"type": "cmd", "seq": 2, "a": [0.0] * ACTION_DIM}).encode()
    mask = b"\x01\x02\x03\x04"
    masked = bytes(c ^ mask[i % 4] for i, c in enumerate(body))
    frame = bytes([0x81, 0x80 | min(len(body), 125)])
    assert len(body) < 126 or True
    if len(body) >= 126:
        frame = bytes([0x81, 0x80 | 126]) + struct.pack(">H", len(body))
    b.sendall(frame + mask + masked)
    msg = ws.recv()
    assert msg["type"] == "cmd"
    a.close()
    b.close()


def test_holds_at_reset_without_client(ckpt_dir):
    policies = CheckpointPolicies.from_dir(ckpt_dir)
    srv = SessionServer(builtin_scenario("C1"), policies, port=0,
                        cfg=SessionConfig(time_scale=50.0, seed=1))
    srv.start()
    try:
        time.sleep(0.5)
        assert srv.env.step_count == 0
    finally:
        srv.shutdown()


def test_session_runs_episode_and_reports_metrics(server, tmp_path):
    client = SyncClient(server.port)
    hello = client.recv("hello")
    assert hello["schema"] == HITL_SCHEMA
    assert hello["scenario"]["id"] == "C1"
    state = client.recv("state")
    assert len(state["agents"]) == 2
    assert len(state["rays"]) == 2 and len(state["rays"][0]) == 36
    # zero command: the partner holds its nominal controller
    client.send({"type": "cmd", "a": [0.0] * ACTION_DIM})
    end = client.recv("end", timeout=30.0)
    assert end["result"]["success"] is True
    assert end["result"]["gamma_time"] is not None
    seqs = [hello["seq"], state["seq"], end["seq"]]
    assert seqs == sorted(seqs)
    client.close()


def test_cmd_values_clamped_server_side(server):
    client = SyncClient(server.port)
    client.recv("hello")
    client.send({"type": "cmd", "a": [5.0] * ACTION_DIM})
    time.sleep(0.2)
    with server._latch_lock:
        assert np.all(np.abs(server._latch.action) <= 1.0)
    client.close()


def test_stale_command_decays_to_zero(ckpt_dir):
    policies = CheckpointPolicies.from_dir(ckpt_dir)
    srv = SessionServer(builtin_scenario("C1"), policies, port=0,
                        cfg=SessionConfig(stale_ms=50.0, time_scale=25.0))
    with srv._latch_lock:
        srv._latch.action = np.ones(ACTION_DIM)
        srv._latch.wallclock = time.monotonic()
    assert np.all(srv._human_action(time.monotonic()) == 1.0)
    assert np.all(srv._human_action(time.monotonic() + 0.2) == 0.0)
    srv.shutdown()


def test_second_client_refused(server):
    first = SyncClient(server.port)
    first.recv("hello")
    second = SyncClient(server.port)
    msg = second.stream.recv()
    assert msg["type"] == "error"
    first.close()
    second.close()


def test_session_log_replays_identically(server, tmp_path):
    client = SyncClient(server.port)
    client.recv("hello")
    client.send({"type": "cmd", "a": [0.0] * ACTION_DIM})
    end = client.recv("end", timeout=30.0)
    client.close()
    time.sleep(0.2)
    log = server.log_path
    policies = server.policies
    scenario = builtin_scenario("C1")
    m1 = replay_command_log(scenario, policies, log)
    m2 = replay_command_log(scenario, policies, log)
    assert m1 == m2
    assert m1.success == end["result"]["success"]
    assert m1.gamma_time == pytest.approx(end["result"]["gamma_time"])
    # and the offline eval path computes the same metrics for the same actions
    # (robot checkpoint, zero partner, same seed)
    robot_only = CheckpointPolicies([policies.params[0], None])
    direct, _ = run_episode(scenario, robot_only, seed=5,
                            env_cfg=EnvConfig(start_jitter=0.0))
    assert direct == m1


def test_state_stream_rate_at_least_20hz(ckpt_dir):
    policies = CheckpointPolicies.from_dir(ckpt_dir)
    srv = SessionServer(builtin_scenario("C1"), policies, port=0,
                        cfg=SessionConfig(time_scale=1.0, seed=3, start_jitter=0.0))
    srv.start()
    try:
        client = SyncClient(srv.port)
        client.recv("hello")
        client.recv("state", timeout=10.0)
        n = 0
        t0 = time.monotonic()
        client.sock.settimeout(5.0)
        while time.monotonic() - t0 < 2.0:
            msg = client.stream.recv()
            if msg and msg["type"] == "state":
                n += 1
        rate = n / (time.monotonic() - t0)
        assert rate >= 20.0, f"state stream at {rate:.1f} Hz"
        client.close()
    finally:
        srv.shutdown()


def test_static_file_serving(ckpt_dir, tmp_path):
    static = tmp_path / "web"
    static.mkdir()
    (static / "index.html").write_text("<html>client</html>")
    policies = CheckpointPolicies.from_dir(ckpt_dir)
    srv = SessionServer(builtin_scenario("C1"), policies, port=0,
                        cfg=SessionConfig(time_scale=25.0), static_dir=static)
    srv.start()
    try:
        sock = socket.create_connection(("127.0.0.1", srv.port), timeout=5.0)
        sock.sendall(b"GET / HTTP/1.1\r\nHost: x\r\n\r\n")
        data = sock.recv(65536).decode()
        assert "200 OK" in data and "client" in data
        sock.close()
        sock = socket.create_connection(("127.0.0.1", srv.port), timeout=5.0)
        sock.sendall(b"GET /missing.js HTTP/1.1\r\nHost: x\r\n\r\n")
        assert "404" in sock.recv(65536).decode()
        sock.close()
    finally:
        srv.shutdown()
