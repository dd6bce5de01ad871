"""Binary checkpoint format "ckpt_v1".

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header
{format, spec, seed, step, arrays: [{name, shape}]}, then the raw float32
little-endian row-major arrays concatenated in header order.  Round-trips
must be byte-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .models import MlpSpec, NetworkParams

MAGIC = b"CKPT_V1\n"
FORMAT = "ckpt_v1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str | Path, params: NetworkParams, *, seed: int, step: int) -> None:
    arrays = params.arrays()
    header = {
        "format": FORMAT,
        "spec": params.spec.to_dict(),
        "seed": int(seed),
        "step": int(step),
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    blob = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    with Path(path).open("wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[NetworkParams, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a {FORMAT} checkpoint")
    off = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    try:
        header = json.loads(raw[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    off += hlen
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: format {header.get('format')!r} != {FORMAT!r}")
    spec = MlpSpec.from_dict(header["spec"])
    weights: list[np.ndarray] = []
    biases: list[np.ndarray] = []
    log_std = None
    for meta in header["arrays"]:
        shape = tuple(int(s) for s in meta["shape"])
        n = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shape).copy()
        off += 4 * n
        name = meta["name"]
        if name.endswith(".w"):
            weights.append(a)
        elif name.endswith(".b"):
            biases.append(a)
        elif name == "log_std":
            log_std = a
        else:
            raise CheckpointError(f"{path}: unknown array {name!r}")
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    params = NetworkParams(spec=spec, weights=weights, biases=biases, log_std=log_std)
    return params, {"seed": int(header["seed"]), "step": int(header["step"])}
