"""Generated layout schema: names, offsets, and units for the observation,
action, and global-state vectors, so replays and UIs decode them identically.
"""

from __future__ import annotations

import json
from pathlib import Path

from .env import GLOBAL_STATE_DIM
from .mdp import ACTION_DIM, COMPRESSED_DIM, FRAME_DIM, N_RAYS, STACKED_DIM, TASK_WINDOW

SCHEMA_VERSION = "layout_v1"

FRAME_BLOCKS = [
    ("psi_task", 2 * TASK_WINDOW, "m", "next anchors relative to the object planar position (dx, dy per anchor, window padded with the final anchor)"),
    ("psi_ego", 13, "mixed", "agent-to-object offset (2, agent frame, m), own velocity (2, agent frame, m/s), yaw (rad), CoM height (m), torso pitch (rad), wrists relative to own base (2 x [x m, y m, z-shoulder m])"),
    ("psi_ptn", 13, "mixed", "partner offset (2, agent frame, m), partner velocity (2, agent frame, m/s), relative yaw (rad), partner CoM height (m), partner torso pitch (rad), partner wrists relative to partner base (2 x 3)"),
    ("psi_obj", 18, "mixed", "4 corners (agent frame x, y m + height m), object CoM (agent frame x, y m + height m), object velocity (agent frame vx, vy m/s + heading rate rad/s)"),
    ("psi_cont", 4, "bool", "own wrist contacts (L, R) then partner wrist contacts (L, R)"),
    ("psi_env", N_RAYS, "unitless", "ray proximity 1 - min(d, d_max)/d_max at yaw-relative angles 2*pi*j/n"),
]

ACTION_ROWS = [
    ("v_x", "body-frame forward velocity residual"),
    ("v_y", "body-frame lateral velocity residual"),
    ("yaw_rate", "yaw rate residual"),
    ("h_com", "CoM height residual"),
    ("alpha_ptc", "torso pitch residual"),
    ("wrist_l_x", "left wrist body-frame x offset"),
    ("wrist_l_y", "left wrist body-frame y offset"),
    ("wrist_l_z", "left wrist z offset"),
    ("wrist_r_x", "right wrist body-frame x offset"),
    ("wrist_r_y", "right wrist body-frame y offset"),
    ("wrist_r_z", "right wrist z offset"),
]

GLOBAL_BLOCKS = [
    ("agent0", 14, "position (2), velocity (2), yaw, yaw rate, CoM height, torso pitch, wrists (2 x 3), world frame"),
    ("agent1", 14, "same layout as agent0"),
    ("object", 11, "pose (x, y, heading), planar velocity (2), heading rate, corner heights (4), CoM height"),
    ("contacts", 4, "agent0 L/R, agent1 L/R"),
    ("task_window", 10, "next 5 anchors relative to the object"),
    ("progress", 1, "step count / episode horizon"),
]


def build_schema() -> dict:
    frame = []
    off = 0
    for name, size, units, desc in FRAME_BLOCKS:
        frame.append({"name": name, "offset": off, "size": size, "units": units, "doc": desc})
        off += size
    assert off == FRAME_DIM
    stacked = [
        {"name": "frame_t", "offset": 0, "size": FRAME_DIM},
        {"name": "compressed_t-1", "offset": FRAME_DIM, "size": COMPRESSED_DIM,
         "doc": "frame_t-1 without psi_env"},
        {"name": "compressed_t-2", "offset": FRAME_DIM + COMPRESSED_DIM, "size": COMPRESSED_DIM},
    ]
    actions = [{"name": n, "index": i, "range": [-1.0, 1.0], "doc": d}
               for i, (n, d) in enumerate(ACTION_ROWS)]
    gstate = []
    off = 0
    for name, size, desc in GLOBAL_BLOCKS:
        gstate.append({"name": name, "offset": off, "size": size, "doc": desc})
        off += size
    assert off == GLOBAL_STATE_DIM
    return {
        "schema": SCHEMA_VERSION,
        "dims": {"frame": FRAME_DIM, "compressed": COMPRESSED_DIM, "stacked": STACKED_DIM,
                 "action": ACTION_DIM, "global_state": GLOBAL_STATE_DIM},
        "frame": frame,
        "stacked": stacked,
        "action": actions,
        "global_state": gstate,
        "wire_schemas": {"scenario": "scenario_v1", "replay": "replay_v1",
                         "planner": "planner_v1", "hitl": "hitl_v1",
                         "checkpoint": "ckpt_v1"},
    }


def write_schema(path: str | Path) -> None:
    Path(path).write_text(json.dumps(build_schema(), indent=2))
