"""Replay logs: one JSONL record per policy step, bit-exact on reload.

Floats are serialized through Python's repr-based json encoder, which
round-trips IEEE doubles exactly, so re-stepping a stored record must
reproduce the stored successor state byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path
from typing import Iterable, Iterator

from .sim import Simulator, StepEvents, WorldState, world_from_dict, world_to_dict

REPLAY_SCHEMA = "replay_v1"


class ReplayError(RuntimeError):
    """Raised when a replay file is malformed or fails re-simulation."""


def record_line(t: int, state: WorldState, commands, events: StepEvents | None) -> str:
    rec = {
        "schema": REPLAY_SCHEMA,
        "t": t,
        "world_state": world_to_dict(state),
        "commands": [cmd.to_list() for cmd in commands] if commands is not None else None,
        "events": asdict(events) if events is not None else None,
    }
    return json.dumps(rec, separators=(",", ":"))


def write_replay(path: str | Path, records: Iterable[str]) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for line in records:
            f.write(line + "\n")


def iter_replay(path: str | Path) -> Iterator[dict]:
    with Path(path).open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReplayError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if rec.get("schema") != REPLAY_SCHEMA:
                raise ReplayError(f"line {lineno}: schema {rec.get('schema')!r} != {REPLAY_SCHEMA!r}")
            yield rec


def verify_replay(path: str | Path, sim: Simulator) -> int:
    """Re-run every stored transition and require bit-identical successors.

    Returns the number of verified transitions.
    """
    from .mdp import TaskSpaceCommand

    records = list(iter_replay(path))
    checked = 0
    for prev, nxt in zip(records, records[1:]):
        if prev["commands"] is None:
            continue
        state = world_from_dict(prev["world_state"])
        commands = tuple(TaskSpaceCommand.from_list(c) for c in prev["commands"])
        stepped, _, _ = sim.step(state, commands)
        if world_to_dict(stepped) != nxt["world_state"]:
            raise ReplayError(f"transition t={prev['t']} does not reproduce the stored successor")
        checked += 1
    return checked
