"""Radix-4 decimation-in-time complex FFT on C16 data.

Stage ``s`` (span ``L = 4**s``) combines groups of four length-L transforms.
Butterfly ``(b, k)`` of stage s reads positions ``b*4L + k + q*L`` (q = 0..3)
of the digit-reversed sequence, multiplies input q by ``W_{4L}^{q k}`` and
writes the four radix-4 outputs back to the same positions.

Systolic variant
----------------
Core ``c`` owns, at every stage but the last, the butterflies
``(4*(c // L) + u, c % L)`` for ``u = 0..3``. Output q of butterfly u on core
``(G, j) = divmod(c, L)`` is input u of butterfly ``G % 4`` on core
``(G // 4) * 4L + j + q*L`` at the next stage, so each core feeds four
consumers over four QLR links and reads its inputs from four producers.
The last two stages are core-local: core j computes stage D-2 butterflies
``(b, j)`` for b = 0..3 into registers and then the last-stage butterflies
``j + q*N/16``. Twiddles are immediates (a core uses one k per stage), the
digit-reversed input addresses are static load offsets, and the stages are
chained through the queues without any barrier.

Baseline variant
----------------
All cores sweep each stage over an in-place work buffer with a barrier
between stages; butterfly p of a stage goes to core ``p % n_cores`` so that
neighbouring cores touch neighbouring banks. Twiddles come from a table in L1 and the first stage
gathers its input through a digit-reversal index table.

Both variants run the same arithmetic on every value, so their outputs are
bit-identical.
"""

from __future__ import annotations

import math

import numpy as np

from .. import softnum as sn
from ..core import QlrConfig, alu, barrier, compute, li, load, qlr_cfg, store
from ..memfabric import Topology
from .program import ConfigError, L1Allocator, OutputRegion, ProgramSet

R_ZERO = 18
R_CNT = 19
SET_X = (20, 21, 22, 23)   # input links of odd stages
SET_Y = (24, 25, 26, 27)   # input links of even stages
OUT = (28, 29, 30, 31)


def n_digits(n_fft: int) -> int:
    d = round(math.log(n_fft, 4)) if n_fft > 1 else 0
    if n_fft < 4 or 4 ** d != n_fft:
        raise ConfigError(f"FFT size {n_fft} is not a power of 4 (>= 4)")
    return d


def digit_reverse(n: int, digits: int) -> int:
    r = 0
    for _ in range(digits):
        r = r * 4 + n % 4
        n //= 4
    return r


def twiddle(m: int, n_fft: int) -> complex:
    """``W_N^m`` rounded to C16; both variants obtain twiddles only from here."""
    return complex(sn.c16_v(np.exp(-2j * np.pi * m / n_fft)))


def _tw_index(q: int, k: int, span: int, n_fft: int) -> int:
    return q * k * (n_fft // (4 * span))


# ---------------------------------------------------------------------------
# functional reference
# ---------------------------------------------------------------------------
def _butterfly_v(a0, a1, a2, a3):
    t0 = sn.cadd16_v(a0, a2)
    t1 = sn.csub16_v(a0, a2)
    t2 = sn.cadd16_v(a1, a3)
    t3 = sn.csub16_v(a1, a3)
    return sn.cadd16_v(t0, t2), sn.csubj16_v(t1, t3), sn.csub16_v(t0, t2), sn.caddj16_v(t1, t3)


def cfft_reference(x) -> np.ndarray:
    """Bit-exact model of both programs; ``x`` is (batch, N) with C16 lanes."""
    x = sn.c16_v(np.atleast_2d(x))
    n = x.shape[1]
    d = n_digits(n)
    perm = np.array([digit_reverse(i, d) for i in range(n)])
    y = x[:, perm].copy()
    for s in range(d):
        span = 4 ** s
        blocks = n // (4 * span)
        v = y.reshape(-1, blocks, 4, span)  # [batch, b, q, k]
        a = [v[:, :, q, :] for q in range(4)]
        if s > 0:
            for q in range(1, 4):
                w = np.array([twiddle(_tw_index(q, k, span, n), n) for k in range(span)])
                a[q] = sn.cmul16_v(a[q], w[None, None, :])
        outs = _butterfly_v(*a)
        y = np.stack(outs, axis=2).reshape(-1, n)
    return y


# ---------------------------------------------------------------------------
# shared emission helpers
# ---------------------------------------------------------------------------
def _butterfly_ops(a, t, dst, tag=""):
    """Eight C16 add/sub ops; ``dst`` receives (y0, y1, y2, y3)."""
    a0, a1, a2, a3 = a
    t0, t1, t2, t3 = t
    return [
        compute("CADD", t0, a0, a2, tag=tag),
        compute("CSUB", t1, a0, a2, tag=tag),
        compute("CADD", t2, a1, a3, tag=tag),
        compute("CSUB", t3, a1, a3, tag=tag),
        compute("CADD", dst[0], t0, t2, tag=tag),
        compute("CSUB", dst[2], t0, t2, tag=tag),
        compute("CSUBJ", dst[1], t1, t3, tag=tag),
        compute("CADDJ", dst[3], t1, t3, tag=tag),
    ]


def _c16_word(z: complex) -> int:
    return int(sn.c16_words_v(np.array([z]))[0])


def _control():
    return [alu("addi", R_CNT, R_CNT, imm=1, tag="ctrl"), alu("branch", -1, R_CNT, tag="ctrl")]


# ---------------------------------------------------------------------------
# systolic variant
# ---------------------------------------------------------------------------
def _in_set(s: int):
    return SET_X if s % 2 else SET_Y


def _systolic_core(c: int, n: int, d: int, batch: int, x_base: int, y_base: int) -> list:
    ops = [li(R_ZERO, 0), li(R_CNT, 0)]
    last_reg = d - 2  # last stage whose butterflies are spread over four blocks
    for tr in range(batch):
        xb = x_base + 4 * n * tr
        yb = y_base + 4 * n * tr
        if d == 1:
            regs = (0, 1, 2, 3)
            ops += [load(r, R_ZERO, xb + 4 * q) for q, r in enumerate(regs)]
            ops += _butterfly_ops(regs, SET_Y, (4, 5, 6, 7))
            ops += [store(4 + q, R_ZERO, yb + 4 * q) for q in range(4)]
            ops += _control()
            continue
        for s in range(last_reg + 1):
            span = 4 ** s
            g, j = divmod(c, span)
            # links: consumers of this stage, producers of the next one
            if s < last_reg:
                nspan = 4 * span
                for q in range(4):
                    cons = (g // 4) * nspan + j + q * span
                    ops.append(qlr_cfg(QlrConfig(OUT[q], "output", cons, 4, peer_reg=_in_set(s + 1)[g % 4])))
                # this core as consumer at stage s+1
                g1, j1 = divmod(c, nspan)
                jp = j1 % span
                for u in range(4):
                    prod = (4 * g1 + u) * span + jp
                    ops.append(qlr_cfg(QlrConfig(_in_set(s + 1)[u], "input", prod, 4)))
            local_out = s == last_reg
            if s == 0:
                # digit-reversed gather with static offsets
                def ld_bfly(u):
                    return [load(4 * u + q, R_ZERO, xb + 4 * digit_reverse(16 * g + 4 * u + q, d), tag="input")
                            for q in range(4)]
                ops += ld_bfly(0) + ld_bfly(1)
                for u in range(4):
                    if u + 2 < 4:
                        ops += ld_bfly(u + 2)
                    a = tuple(4 * u + q for q in range(4))
                    dst = a if local_out else OUT
                    ops += _butterfly_ops(a, SET_Y, dst)
                continue
            src = _in_set(s)
            if local_out:
                tw_regs, tmp = (_in_set(s + 1)[0], _in_set(s + 1)[1], _in_set(s + 1)[2]), OUT
            else:
                tw_regs, tmp = (0, 1, 2), (4, 5, 6, 7)
            for q in range(1, 4):
                ops.append(li(tw_regs[q - 1], _c16_word(twiddle(_tw_index(q, j, span, n), n)), tag="twiddle"))
            for u in range(4):
                # local outputs overwrite the butterfly's own inputs in place
                a = tuple(4 * u + q for q in range(4)) if local_out else (8, 9, 10, 11)
                ops.append(alu("mv", a[0], src[u]))
                for q in range(1, 4):
                    ops.append(compute("CMUL", a[q], src[u], tw_regs[q - 1]))
                dst = a if local_out else OUT
                ops += _butterfly_ops(a, tmp, dst)
        # last stage: butterflies k = c + q*N/16 from registers R[4b + q]
        span = n // 4
        tw_regs, tmp = SET_X[:3], OUT
        for q in range(4):
            k = c + q * (n // 16)
            for b in range(1, 4):
                ops.append(li(tw_regs[b - 1], _c16_word(twiddle(_tw_index(b, k, span, n), n)), tag="twiddle"))
            a = tuple(4 * b + q for b in range(4))
            for b in range(1, 4):
                ops.append(compute("CMUL", a[b], a[b], tw_regs[b - 1]))
            ops += _butterfly_ops(a, tmp, a)
            ops += [store(a[qo], R_ZERO, yb + 4 * (k + qo * span), tag="output") for qo in range(4)]
        ops += _control()
    return ops


# ---------------------------------------------------------------------------
# baseline variant
# ---------------------------------------------------------------------------
def _baseline_core(c: int, n: int, d: int, batch: int, x_base: int, y_base: int, tw_base: int, br_base: int) -> list:
    ops = [li(R_ZERO, 0), li(R_CNT, 0)]
    n_cores = max(n // 16, 1)
    n_bfly = max(n // 4 // n_cores, 1)  # butterflies per core and stage
    sets = [(0, 1, 2, 3, 4, 5, 6), (7, 8, 9, 10, 11, 12, 13)]
    idx = [(24, 25, 26, 27), (28, 29, 30, 31)]
    tmp = (14, 15, 16, 17)
    bar = 0
    for tr in range(batch):
        xb = x_base + 4 * n * tr
        yb = y_base + 4 * n * tr
        for s in range(d):
            span = 4 ** s
            bfl = [(p // span, p % span) for p in range(c, n_bfly * n_cores, n_cores)]

            def pos(bk, q):
                return bk[0] * 4 * span + bk[1] + q * span

            def fetch(i):
                bk = bfl[i]
                rs = sets[i % 2]
                out = []
                if s == 0:
                    # gather through the digit-reversal table
                    ir = idx[i % 2]
                    out += [load(ir[q], R_ZERO, br_base + 4 * pos(bk, q), tag="bitrev") for q in range(4)]
                    out += [load(rs[q], ir[q], xb, tag="input") for q in range(4)]
                else:
                    out += [load(rs[q], R_ZERO, yb + 4 * pos(bk, q)) for q in range(4)]
                    out += [load(rs[3 + q], R_ZERO, tw_base + 4 * _tw_index(q, bk[1], span, n), tag="twiddle")
                            for q in range(1, 4)]
                return out

            ops += fetch(0)
            for i, bk in enumerate(bfl):
                if i + 1 < len(bfl):
                    ops += fetch(i + 1)
                rs = sets[i % 2]
                a = rs[:4]
                if s > 0:
                    for q in range(1, 4):
                        ops.append(compute("CMUL", a[q], a[q], rs[3 + q]))
                ops += _butterfly_ops(a, tmp, a)
                ops += [store(a[q], R_ZERO, yb + 4 * pos(bk, q), tag="output" if s == d - 1 else "") for q in range(4)]
                ops += [alu("addi", R_CNT, R_CNT, imm=1, tag="ctrl"), alu("addi", R_CNT, R_CNT, imm=1, tag="ctrl"),
                        alu("addi", R_CNT, R_CNT, imm=1, tag="ctrl"), alu("branch", -1, R_CNT, tag="ctrl")]
            ops.append(barrier(bar % 2, tag="sync"))
            bar += 1
    return ops


# ---------------------------------------------------------------------------
def build_cfft(n_fft: int = 1024, variant: str = "systolic", batch: int = 1, x=None, seed: int = 0,
               topo: Topology = Topology()):
    """Returns ``(program, reference)``; the output region "Y" holds the
    natural-order spectra of the ``batch`` transforms back to back."""
    d = n_digits(n_fft)
    if variant not in ("baseline", "systolic"):
        raise ConfigError(f"unknown variant {variant!r}")
    if batch < 1:
        raise ConfigError("batch must be >= 1")
    n_cores = max(n_fft // 16, 1)
    if n_cores > topo.n_cores:
        raise ConfigError(f"FFT size {n_fft} needs {n_cores} cores")
    if x is None:
        rng = np.random.default_rng(seed)
        x = (rng.standard_normal((batch, n_fft)) + 1j * rng.standard_normal((batch, n_fft))) / np.sqrt(2)
    x = sn.c16_v(np.asarray(x).reshape(batch, n_fft))
    alloc = L1Allocator(topo)
    x_base = alloc.alloc(batch * n_fft, sn.c16_words_v(x))
    y_base = alloc.alloc(batch * n_fft)
    streams = [[] for _ in range(topo.n_cores)]
    if variant == "systolic":
        for c in range(n_cores):
            streams[c] = _systolic_core(c, n_fft, d, batch, x_base, y_base)
    else:
        tw = np.array([twiddle(m, n_fft) for m in range(max(3 * n_fft // 4, 1))])
        tw_base = alloc.alloc(tw.size, sn.c16_words_v(tw))
        br = np.array([4 * digit_reverse(i, d) for i in range(n_fft)], dtype=np.uint32)
        br_base = alloc.alloc(n_fft, br)
        for c in range(n_cores):
            streams[c] = _baseline_core(c, n_fft, d, batch, x_base, y_base, tw_base, br_base)
    # 8 add/sub per butterfly (2 FLOP each) + 3 complex multiplies (6 FLOP)
    # in every stage but the first
    flops = batch * (n_fft // 4) * (16 * d + 18 * (d - 1))
    prog = ProgramSet(
        name=f"cfft_{n_fft}x{batch}_{variant}",
        streams=streams,
        image=alloc.image,
        outputs=[OutputRegion("Y", y_base, batch * n_fft)],
        expected_flops=flops,
        meta={"variant": variant, "n_fft": n_fft, "batch": batch},
    )
    return prog, cfft_reference(x)


def decode_output(prog: ProgramSet, memory: np.ndarray) -> np.ndarray:
    w = prog.read_output(memory, "Y")
    return sn.c16_from_words_v(w).reshape(prog.meta["batch"], prog.meta["n_fft"])
