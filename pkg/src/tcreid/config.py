"""Plain-text ``key = value`` configuration files mapped onto dataclasses."""
from __future__ import annotations

import dataclasses
import hashlib
import types
import typing
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_matrix(v: str) -> np.ndarray:
    # rows separated by ';', entries by ','
    rows = [[float(x) for x in r.split(",")] for r in v.split(";") if r.strip()]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("ragged matrix")
    return np.array(rows)


def _convert(raw: str, hint):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        return _convert(raw, args[0])
    if hint is bool:
        return _parse_bool(raw)
    if hint is int:
        return int(raw)
    if hint is float:
        return float(raw)
    if hint is str:
        return raw
    if hint is np.ndarray:
        return _parse_matrix(raw)
    raise TypeError(f"unsupported config field type {hint!r}")


def from_mapping(cls, values: dict[str, str], source: str = "<config>"):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, raw in values.items():
        try:
            kwargs[key] = _convert(raw, hints[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: bad value for {key}: {exc}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load(cls, path: str | Path):
    path = Path(path)
    return from_mapping(cls, parse_kv(path.read_text(), str(path)), str(path))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, np.ndarray):
        return ";".join(",".join(repr(float(x)) for x in row) for row in np.atleast_2d(value))
    if value is None:
        return "none"
    return str(value)


def dump(obj) -> str:
    return "".join(f"{f.name} = {_format(getattr(obj, f.name))}\n" for f in dataclasses.fields(obj) if f.init)


def config_hash(obj) -> str:
    return hashlib.sha256(dump(obj).encode()).hexdigest()
