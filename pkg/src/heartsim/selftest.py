"""Fast built-in invariant checks behind ``heartsim selftest``.

Each check returns ``(passed, detail)``; the suite takes a few seconds. The
full test suite lives under ``tests/``.
"""

from __future__ import annotations

import math

import numpy as np

from . import softnum as sn
from .cluster import ClusterConfig, simulate
from .memfabric import LatencyTable
from .perf import CORNERS, KernelPerf, peak_gflops

# small sizes so that every kernel runs in well under a second
_SMALL = {
    "matmul": ("systolic", {"m": 16, "n": 8, "p": 16}),
    "cmatmul": ("baseline", {"n_b": 4, "n_rx": 8, "n_sc": 64}),
    "cfft": ("systolic", {"n_fft": 64, "batch": 1}),
    "conv2d": ("default", {"h": 10, "w": 10, "k": 3}),
    "dotp": ("default", {"length": 512}),
    "mmse": ("default", {"n_b": 4, "n_tx": 2, "n_sc": 8, "n_rhs": 1, "sigma2": 0.1}),
    "chest": ("default", {"n_b": 2, "n_tx": 2, "n_sc": 64, "k0": 0, "k1": 64}),
}


def _softnum():
    cases = [(sn.f16_round(1.0), 0x3C00), (sn.f16_round(2049.0), sn.f16_round(2048.0)),
             (sn.f16_round(65520.0), 0x7C00)]
    bad = [c for c in cases if c[0] != c[1]]
    return not bad, f"{len(cases) - len(bad)}/{len(cases)} binary16 rounding examples"


def _peak():
    g = peak_gflops(CORNERS["800MHz"])
    return math.isclose(g, 409.6, rel_tol=0, abs_tol=1e-9), f"peak {g:.1f} GFLOP/s at 800 MHz"


def _kernels(seed):
    from .kernels.registry import KERNELS, outputs_match

    failed = []
    flat = ClusterConfig(latency=LatencyTable(1, 1, 1))
    for name, (variant, params) in _SMALL.items():
        spec = KERNELS[name]
        prog, expected = spec.build(variant, seed, **params)
        run = simulate(prog)
        ok = outputs_match(spec.decode(prog, run.memory), expected)
        ok = ok and np.array_equal(run.memory, simulate(prog, flat).memory)
        fr = KernelPerf.from_run(name, run).fractions()
        ok = ok and math.isclose(sum(fr.values()), 1.0, abs_tol=1e-9)
        if not ok:
            failed.append(name)
    detail = "all kernels match, latency-independent, fractions close" if not failed else f"failed: {failed}"
    return not failed, detail


def _qam():
    from .linksim import qam16_demod, qam16_mod

    bits = np.array([(n >> s) & 1 for n in range(16) for s in (3, 2, 1, 0)])
    sym = qam16_mod(bits)
    ok = np.array_equal(qam16_demod(sym), bits) and math.isclose(np.mean(np.abs(sym) ** 2), 1.0)
    return ok, "16QAM round trip and unit energy"


def run_selftest(seed: int = 0) -> list:
    checks = [("softnum", _softnum), ("peak_gflops", _peak), ("kernels", lambda: _kernels(seed)), ("qam16", _qam)]
    out = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
