"""Experiment configuration files.

Two formats are accepted: a JSON object, or flat ``key = value`` lines with
``#`` comments. Flat values are read as int, float, bool or string, in that
order. The parsed mapping is echoed into every report for provenance.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .kernels.program import ConfigError

SEED_ENV = "HEARTSIM_SEED"


def _scalar(text: str):
    t = text.strip()
    low = t.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    if len(t) >= 2 and t[0] == t[-1] and t[0] in "\"'":
        return t[1:-1]
    return t


def parse_config_text(text: str) -> dict:
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("a JSON config must be an object")
        return data
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {n}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"config line {n}: empty key")
        out[key] = _scalar(value)
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def parse_assignments(items) -> dict:
    """``["n=64", "variant=baseline"]`` -> ``{"n": 64, "variant": "baseline"}``."""
    return parse_config_text("\n".join(items or []))


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return fallback
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
