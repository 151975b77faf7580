"""Layered defaults: command-line flags > environment > config file > built-ins."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

ENV_PREFIX = "PERFBENCH_"
DEFAULT_CONFIG_FILE = "perfbench.conf"

BUILTINS: dict[str, str] = {
    "reps": "30",
    "warmup": "1",
    "alpha": "0.05",
    "method": "welch",
    "poll": "10",
    "interval": "0.02",
    "seed": "1",
    "n": "1000",
    "lam": "1",
    "breaks": "100",
}

CASTS = {
    "reps": int,
    "warmup": int,
    "alpha": float,
    "poll": float,
    "interval": float,
    "seed": int,
    "n": int,
    "lam": float,
    "breaks": int,
    "timeout": float,
    "workers": int,
}


class ConfigError(ValueError):
    pass


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(
    path: str | os.PathLike | None = None,
    env: Mapping[str, str] | None = None,
    flags: Mapping[str, object] | None = None,
) -> dict[str, object]:
    """Effective configuration with typed values.

    ``path`` None means ``$PERFBENCH_CONFIG`` or ``./perfbench.conf`` when
    that file exists; an explicitly named file must be readable.  Flags
    whose value is None are treated as not given.
    """
    env = os.environ if env is None else env
    merged: dict[str, object] = dict(BUILTINS)
    if path is None:
        path = env.get(ENV_PREFIX + "CONFIG")
        if path is None and Path(DEFAULT_CONFIG_FILE).is_file():
            path = DEFAULT_CONFIG_FILE
    if path is not None:
        merged.update(read_config_file(path))
    for key, value in env.items():
        if key.startswith(ENV_PREFIX) and key != ENV_PREFIX + "CONFIG":
            merged[key[len(ENV_PREFIX):].lower()] = value
    for key, value in (flags or {}).items():
        if value is not None:
            merged[key] = value
    typed = {}
    for key, value in merged.items():
        cast = CASTS.get(key)
        if cast is not None and isinstance(value, str):
            try:
                value = cast(value)
            except ValueError:
                raise ConfigError(f"bad value for {key}: {value!r}") from None
        typed[key] = value
    return typed
