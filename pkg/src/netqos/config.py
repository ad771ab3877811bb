"""Line-oriented ``key = value`` config files with ``[section]`` headers."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path

from .errors import ConfigInvalid


def parse_config(text: str, repeatable=("event",)) -> dict:
    """Parse into ``{section: {key: value-or-list}}``; the top level is section ``""``."""
    out: dict = {"": {}}
    section = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {n}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigInvalid(f"line {n}: empty key")
        sect = out[section]
        if key in repeatable:
            sect.setdefault(key, []).append(val)
        elif key in sect:
            raise ConfigInvalid(f"line {n}: duplicate key {key!r}")
        else:
            sect[key] = val
    return out


def read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigInvalid(f"config file not found: {p}")
    return parse_config(p.read_text(encoding="utf-8"))


def coerce(value: str, like):
    """Convert ``value`` to the type of the default ``like``."""
    if isinstance(like, bool):
        v = value.lower()
        if v in ("true", "yes", "1"):
            return True
        if v in ("false", "no", "0"):
            return False
        raise ConfigInvalid(f"not a boolean: {value!r}")
    try:
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ConfigInvalid(f"bad number {value!r}") from None
    if isinstance(like, tuple):
        parts = [s.strip() for s in value.split(",") if s.strip()]
        if like and isinstance(like[0], (int, float)):
            return tuple(coerce(s, like[0]) for s in parts)
        return tuple(parts)
    return value


def apply_flat(obj_cls, values: dict, defaults=None):
    """Build dataclass ``obj_cls`` from string ``values``; unknown keys are errors."""
    base = defaults if defaults is not None else obj_cls()
    known = {f.name for f in fields(obj_cls)}
    kw = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigInvalid(f"unknown key {key!r} for {obj_cls.__name__}")
        kw[key] = coerce(val, getattr(base, key))
    return obj_cls(**{**{f.name: getattr(base, f.name) for f in fields(obj_cls)}, **kw})


def config_hash(*objs) -> str:
    def plain(o):
        if is_dataclass(o):
            return plain(asdict(o))
        if isinstance(o, dict):
            return {str(k): plain(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [plain(v) for v in o]
        return o
    blob = json.dumps([plain(o) for o in objs], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
