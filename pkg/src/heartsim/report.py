"""Machine-readable run reports (schema ``heartsim-report/1``).

Reports contain no timestamps or host information, so the same command with
the same seed and configuration always serializes to the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import math
from importlib import resources

import numpy as np

from . import __version__
from .perf import Corner, KernelPerf, derive_gflops

SCHEMA_ID = "heartsim-report/1"


def load_schema() -> dict:
    return json.loads(resources.files("heartsim").joinpath("data/report.schema.json").read_text())


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if the report does not conform."""
    import jsonschema

    jsonschema.validate(json.loads(dumps(report)), load_schema())


def digest_arrays(*arrays) -> str:
    """SHA-256 over the raw bytes (plus shape and dtype) of the given arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(f"{a.dtype.str}{a.shape}".encode())
        h.update(a.tobytes())
    return h.hexdigest()


def corner_dict(corner: Corner | None):
    if corner is None:
        return None
    return {"label": corner.label, "frequency_hz": corner.frequency_hz, "voltage_v": corner.voltage_v}


def step_dict(kp: KernelPerf, corner: Corner) -> dict:
    return {
        "cycles": kp.cycles,
        "launches": kp.runs,
        "ipc": kp.ipc,
        "stall_fractions": kp.fractions() or None,
        "gflops": derive_gflops(kp.flops, kp.cycles, corner),
    }


def new_report(command: str, seed: int, config: dict, corner: Corner | None = None) -> dict:
    return {
        "schema": SCHEMA_ID,
        "command": command,
        "version": __version__,
        "seed": int(seed),
        "config": config,
        "corner": corner_dict(corner),
        "cycles": None,
        "ipc": None,
        "stall_fractions": None,
        "gflops": None,
        "gops": None,
        "gbps": None,
        "latency_ms": None,
        "budget_pass": None,
        "outputs_digest": digest_arrays(),
        "energy": None,   # no power model
    }


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def dumps(report: dict) -> str:
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
