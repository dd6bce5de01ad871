"""Run configuration: JSON files merged with dotted-path flag overrides.

Every run resolves its config fully up front and writes the resolved copy
into the output directory, so re-running from that copy reproduces the run.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Any

OUTPUT_ROOT_ENV = "COTRANSPORT_OUT"


class ConfigError(ValueError):
    pass


def load_config_file(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def parse_override(text: str) -> tuple[list[str], Any]:
    """`a.b.c=value` with JSON value parsing, bare strings allowed."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_override(tree: dict, path: list[str], value: Any) -> None:
    node = tree
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot override through non-object at {part!r}")
    node[path[-1]] = value


def merge_config(defaults: dict, file_path: str | None, overrides: list[str]) -> dict:
    tree = json.loads(json.dumps(defaults))   # deep copy
    if file_path:
        _deep_update(tree, load_config_file(file_path))
    for text in overrides:
        path, value = parse_override(text)
        apply_override(tree, path, value)
    return tree


def _deep_update(base: dict, extra: dict) -> None:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v


def dataclass_from_dict(cls, data: dict):
    """Build a dataclass, rejecting unknown keys with their full names."""
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if is_dataclass(f.type) and isinstance(v, dict):
            v = dataclass_from_dict(f.type, v)
        if isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    return cls(**kwargs)


def resolve_out_dir(explicit: str | None, default_name: str) -> Path:
    if explicit:
        return Path(explicit)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / default_name


def dump_config(cfg, path: Path) -> None:
    data = asdict(cfg) if is_dataclass(cfg) else cfg
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=str))
