"""DMRS least-squares channel estimation with comb pilots.

Transmitter t sends its pilots on subcarriers ``k = t + n_tx * p``. For every
(beam, transmitter) pair and comb point the kernel removes the unit-modulus
pilot (multiply by its conjugate), averages the two DMRS symbols and then
fills the subcarriers between comb points by linear interpolation
``h_p + a * (h_{p+1} - h_p)``. Subcarriers before the first comb point hold
its value, subcarriers after the last one hold the last value.

The cluster program deals (beam, transmitter, comb segment) units over the
cores; each unit streams its comb points once and writes one window of the
estimate laid out as ``[k][beam][tx]``.
"""

from __future__ import annotations

import numpy as np

from .. import softnum as sn
from ..core import FLOPS, compute, li, load, store
from ..memfabric import Topology
from .program import ConfigError, L1Allocator, OutputRegion, ProgramSet

MAX_TX = 8
R_ZERO = 30
HALF = 12
ALPHA0 = 13                      # alpha_d lives in register ALPHA0 + d - 1
SETS = ((1, 2, 3, 4), (20, 21, 22, 23))   # (y0, y1, pilot0, pilot1), double buffered
LS0, LS1, AVG, DIFF, TMP, OUT = 5, 6, (7, 8), 9, 10, 11


def _alpha(d: int, n_tx: int) -> complex:
    return complex(sn.c16_v(d / n_tx))


def chest_reference(rx, pilots, n_tx: int) -> np.ndarray:
    """Bit-exact model of the program: ``rx`` is (2, n_b, n_sc), ``pilots``
    (2, n_sc); returns the (n_sc, n_b, n_tx) estimate with C16 lanes."""
    rx = sn.c16_v(rx)
    pilots = sn.c16_v(pilots)
    _, n_b, n_sc = rx.shape
    if n_sc % n_tx:
        raise ConfigError("subcarrier count must be a multiple of the transmitter count")
    n_p = n_sc // n_tx
    est = np.zeros((n_sc, n_b, n_tx), dtype=complex)
    half = complex(0.5)
    for t in range(n_tx):
        kp = t + n_tx * np.arange(n_p)
        ls0 = sn.cmul16_v(rx[0][:, kp], pilots[0][kp], conj_b=True)
        ls1 = sn.cmul16_v(rx[1][:, kp], pilots[1][kp], conj_b=True)
        avg = sn.cmul16_v(sn.cadd16_v(ls0, ls1), half)          # (n_b, n_p)
        diff = sn.csub16_v(avg[:, 1:], avg[:, :-1])
        est[:t, :, t] = avg[:, 0]
        for d in range(n_tx):
            ks = kp[:-1] + d
            if d == 0:
                est[ks, :, t] = avg[:, :-1].T
            else:
                est[ks, :, t] = sn.cadd16_v(avg[:, :-1], sn.cmul16_v(diff, _alpha(d, n_tx))).T
        est[kp[-1]:, :, t] = avg[:, -1]
    return est


def _segments_for(t, n_tx, n_p, k0, k1):
    """Segment indices whose outputs intersect ``[k0, k1)``.

    Segment p covers ``[t + n_tx p, t + n_tx (p + 1))``; segment 0 also owns
    ``[0, t)`` and the last segment everything up to the end.
    """
    def seg(k):
        return min(max((k - t) // n_tx, 0), n_p - 1)
    return seg(k0), seg(k1 - 1) + 1


def _unit_ops(b, t, sa, sb, n_tx, n_p, n_sc, k0, k1, addr):
    rx_at, pil_at, out_at = addr
    ops = []

    def fetch(p, regs):
        k = t + n_tx * p
        return [load(regs[0], R_ZERO, rx_at(0, b, k)), load(regs[1], R_ZERO, rx_at(1, b, k)),
                load(regs[2], R_ZERO, pil_at(0, k)), load(regs[3], R_ZERO, pil_at(1, k))]

    def put(k, reg):
        return [store(reg, R_ZERO, out_at(k, b, t), tag="output")] if k0 <= k < k1 else []

    last = min(sb, n_p - 1)
    ops += fetch(sa, SETS[0])
    for i, p in enumerate(range(sa, last + 1)):
        regs = SETS[i % 2]
        if p + 1 <= last:
            ops += fetch(p + 1, SETS[(i + 1) % 2])
        cur, prev = AVG[i % 2], AVG[(i + 1) % 2]
        ops += [compute("CMUL", LS0, regs[0], regs[2], conj=True),
                compute("CMUL", LS1, regs[1], regs[3], conj=True),
                compute("CADD", TMP, LS0, LS1),
                compute("CMUL", cur, TMP, HALF)]
        if p == 0:
            for k in range(t):
                ops += put(k, cur)
        if p > sa:
            kb = t + n_tx * (p - 1)
            ops += put(kb, prev)
            ops.append(compute("CSUB", DIFF, cur, prev))
            for d in range(1, n_tx):
                if k0 <= kb + d < k1:
                    ops += [compute("CMUL", TMP, DIFF, ALPHA0 + d - 1),
                            compute("CADD", OUT, prev, TMP)]
                    ops += put(kb + d, OUT)
        if p == n_p - 1 and sb == n_p:
            for k in range(t + n_tx * p, n_sc):
                ops += put(k, cur)
    return ops


def build_chest(rx=None, pilots=None, n_b: int = 8, n_tx: int = 8, n_sc: int = 1024, window=None,
                seed: int = 0, topo: Topology = Topology()):
    """Channel-estimation program for the output subcarriers ``window``
    (default: all). Returns ``(program, reference_window)``."""
    if not 1 <= n_tx <= MAX_TX:
        raise ConfigError(f"need 1 <= n_tx <= {MAX_TX}")
    if n_sc % n_tx or n_sc < 2 * n_tx:
        raise ConfigError("subcarrier count must be a multiple of n_tx with at least two comb points")
    rng = np.random.default_rng(seed)
    if rx is None:
        rx = (rng.standard_normal((2, n_b, n_sc)) + 1j * rng.standard_normal((2, n_b, n_sc))) / np.sqrt(2)
    if pilots is None:
        pilots = 1j ** rng.integers(0, 4, (2, n_sc))
    rx = sn.c16_v(np.asarray(rx).reshape(2, n_b, n_sc))
    pilots = sn.c16_v(np.asarray(pilots).reshape(2, n_sc))
    k0, k1 = window or (0, n_sc)
    if not 0 <= k0 < k1 <= n_sc:
        raise ConfigError("bad subcarrier window")
    n_p = n_sc // n_tx
    alloc = L1Allocator(topo)
    rx_base = alloc.alloc(rx.size, sn.c16_words_v(rx).ravel())
    pil_base = alloc.alloc(pilots.size, sn.c16_words_v(pilots).ravel())
    out_base = alloc.alloc((k1 - k0) * n_b * n_tx)
    addr = (
        lambda d, b, k: rx_base + 4 * ((d * n_b + b) * n_sc + k),
        lambda d, k: pil_base + 4 * (d * n_sc + k),
        lambda k, b, t: out_base + 4 * (((k - k0) * n_b + b) * n_tx + t),
    )
    # work units: (beam, tx, segment range), enough of them to cover the cluster
    pairs = [(b, t) for t in range(n_tx) for b in range(n_b)]
    n_split = max(1, -(-topo.n_cores // len(pairs)))
    units = []
    for b, t in pairs:
        sa, sb = _segments_for(t, n_tx, n_p, k0, k1)
        edges = np.linspace(sa, sb, min(n_split, sb - sa) + 1).round().astype(int)
        units += [(b, t, int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    streams = [[] for _ in range(topo.n_cores)]
    for u, (b, t, sa, sb) in enumerate(units):
        c = u % topo.n_cores
        if not streams[c]:
            streams[c] = [li(R_ZERO, 0), li(HALF, sn.c16_pack(sn.f16_round(0.5), 0))]
            streams[c] += [li(ALPHA0 + d - 1, int(sn.c16_words_v(np.array([_alpha(d, n_tx)]))[0]))
                           for d in range(1, n_tx)]
        streams[c] += _unit_ops(b, t, sa, sb, n_tx, n_p, n_sc, k0, k1, addr)
    prog = ProgramSet(
        name=f"chest_{n_b}x{n_tx}_{k0}-{k1}",
        streams=streams,
        image=alloc.image,
        outputs=[OutputRegion("H", out_base, (k1 - k0) * n_b * n_tx)],
        meta={"n_b": n_b, "n_tx": n_tx, "window": [k0, k1]},
    )
    prog.expected_flops = sum(FLOPS.get(op.kind, 0) for st in prog.streams for op in st if op.op == "compute")
    return prog, chest_reference(rx, pilots, n_tx)[k0:k1]


def decode_output(prog: ProgramSet, memory) -> np.ndarray:
    k0, k1 = prog.meta["window"]
    w = prog.read_output(memory, "H")
    return sn.c16_from_words_v(w).reshape(k1 - k0, prog.meta["n_b"], prog.meta["n_tx"])
