"""Integer deep-learning kernels: 2-D convolution and dot product.

Both are classic data-parallel tilings where every core loads its own
operands and the cores meet at a final barrier.
"""

from __future__ import annotations

import numpy as np

from ..core import alu, barrier, compute, li, load, store
from ..memfabric import Topology
from .matmul import int_words, words_int
from .program import ConfigError, L1Allocator, OutputRegion, ProgramSet

R_ZERO = 30
R_CNT = 31


def _ctrl():
    return [alu("addi", R_CNT, R_CNT, imm=1, tag="ctrl"), alu("branch", -1, R_CNT, tag="ctrl")]


def _wrap(x):
    return ((np.asarray(x, dtype=np.int64) + 2**31) % 2**32) - 2**31


def conv2d_reference(img, ker) -> np.ndarray:
    """Valid 2-D correlation with int32 wrap-around."""
    img = np.asarray(img, dtype=np.int64)
    ker = np.asarray(ker, dtype=np.int64)
    k = ker.shape[0]
    oh, ow = img.shape[0] - k + 1, img.shape[1] - k + 1
    out = np.zeros((oh, ow), dtype=np.int64)
    for dy in range(k):
        for dx in range(k):
            out += ker[dy, dx] * img[dy:dy + oh, dx:dx + ow]
    return _wrap(out)


def build_conv2d(h: int = 64, w: int = 62, k: int = 3, img=None, ker=None, seed: int = 0,
                 topo: Topology = Topology()):
    """Valid KxK convolution of an HxW int32 image; output rows are dealt
    round-robin over the cores.

    A core keeps the kernel in registers and slides a KxK window along its
    output row, loading only the K pixels of the incoming column per output.
    The window columns rotate through register groups, so no moves are
    needed. Returns ``(program, reference)``.
    """
    if k < 1 or k > 3:
        raise ConfigError("kernel size must be 1..3 (register budget)")
    if h < k or w < k:
        raise ConfigError("image smaller than the kernel")
    rng = np.random.default_rng(seed)
    img = rng.integers(-128, 128, (h, w)) if img is None else np.asarray(img)
    ker = rng.integers(-128, 128, (k, k)) if ker is None else np.asarray(ker)
    if img.shape != (h, w) or ker.shape != (k, k):
        raise ConfigError("image/kernel shape mismatch")
    oh, ow = h - k + 1, w - k + 1
    alloc = L1Allocator(topo)
    img_base = alloc.alloc(h * w, int_words(img))
    ker_base = alloc.alloc(k * k, int_words(ker))
    out_base = alloc.alloc(oh * ow)
    n = topo.n_cores
    kreg = list(range(k * k))                       # kernel weights
    win = [[9 + 3 * g + r for r in range(k)] for g in range(k + 1)]  # rotating window columns
    acc = 21

    streams = [[] for _ in range(n)]
    for c in range(n):
        rows = range(c, oh, n)
        if not rows:
            continue
        ops = [li(R_ZERO, 0), li(R_CNT, 0)]
        ops += [load(kreg[i], R_ZERO, ker_base + 4 * i) for i in range(k * k)]

        def col(y, x, g):
            return [load(win[g][r], R_ZERO, img_base + 4 * ((y + r) * w + x)) for r in range(k)]

        for y in rows:
            # prime the first K-1 window columns, then one new column per output
            for x in range(k - 1):
                ops += col(y, x, x % (k + 1))
            ops += col(y, k - 1, (k - 1) % (k + 1))
            for x in range(ow):
                nxt = x + k
                if x + 1 < ow:
                    ops += col(y, nxt, nxt % (k + 1))
                ops.append(li(acc, 0, tag="acc"))
                for dx in range(k):
                    g = (x + dx) % (k + 1)
                    for dy in range(k):
                        ops.append(compute("IMAC", acc, acc, kreg[dy * k + dx], win[g][dy]))
                ops.append(store(acc, R_ZERO, out_base + 4 * (y * ow + x)))
                ops += _ctrl()
        ops.append(barrier(0, tag="sync"))
        streams[c] = ops
    prog = ProgramSet(
        name=f"conv2d_{h}x{w}_k{k}",
        streams=streams,
        image=alloc.image,
        outputs=[OutputRegion("C", out_base, oh * ow)],
        expected_int_ops=2 * oh * ow * k * k,
        meta={"h": h, "w": w, "k": k, "shape": [oh, ow]},
    )
    return prog, conv2d_reference(img, ker)


def build_dotp(length: int = 16384, a=None, b=None, seed: int = 0, topo: Topology = Topology(),
               unroll: int = 4):
    """Dot product of two int32 vectors.

    Core c takes elements ``c, c + n, c + 2n, ...`` so that the cores sweep
    neighbouring banks; partial sums meet in L1 behind a barrier and core 0
    adds them up. Returns ``(program, reference)``.
    """
    n = topo.n_cores
    if length < 1 or length % n:
        raise ConfigError(f"length must be a positive multiple of {n}")
    rng = np.random.default_rng(seed)
    a = rng.integers(-1000, 1000, length) if a is None else np.asarray(a)
    b = rng.integers(-1000, 1000, length) if b is None else np.asarray(b)
    if a.shape != (length,) or b.shape != (length,):
        raise ConfigError("vector length mismatch")
    alloc = L1Allocator(topo)
    a_base = alloc.alloc(length, int_words(a))
    # offset b by half the banks so a[i] and b[i] never share a bank
    alloc.alloc(topo.n_banks // 2)
    b_base = alloc.alloc(length, int_words(b))
    part_base = alloc.alloc(n)
    out_base = alloc.alloc(1)
    per_core = length // n
    regs = [(list(range(0, unroll)), list(range(4, 4 + unroll))), (list(range(8, 8 + unroll)), list(range(12, 12 + unroll)))]
    acc = 20
    streams = []
    for c in range(n):
        ops = [li(R_ZERO, 0), li(R_CNT, 0), li(acc, 0, tag="acc")]
        idx = [c + n * m for m in range(per_core)]
        chunks = [idx[i:i + unroll] for i in range(0, per_core, unroll)]

        def loads(g):
            ra, rb = regs[g % 2]
            out = []
            for u, e in enumerate(chunks[g]):
                out += [load(ra[u], R_ZERO, a_base + 4 * e), load(rb[u], R_ZERO, b_base + 4 * e)]
            return out

        ops += loads(0)
        for g in range(len(chunks)):
            if g + 1 < len(chunks):
                ops += loads(g + 1)
            ra, rb = regs[g % 2]
            ops += [compute("IMAC", acc, acc, ra[u], rb[u]) for u in range(len(chunks[g]))]
            ops += _ctrl()
        ops.append(store(acc, R_ZERO, part_base + 4 * c))
        ops.append(barrier(0, tag="sync"))
        if c == 0:
            # final reduction of the partial sums
            ops.append(li(acc, 0, tag="acc"))
            depth = min(8, n)
            ops += [load(1 + p, R_ZERO, part_base + 4 * p) for p in range(depth)]
            for p in range(n):
                r = 1 + p % depth
                ops.append(alu("add", acc, acc, r))
                if p + depth < n:
                    ops.append(load(r, R_ZERO, part_base + 4 * (p + depth)))
            ops.append(store(acc, R_ZERO, out_base))
        streams.append(ops)
    ref = _wrap(np.dot(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))
    prog = ProgramSet(
        name=f"dotp_{length}",
        streams=streams,
        image=alloc.image,
        outputs=[OutputRegion("P", part_base, n), OutputRegion("R", out_base, 1)],
        expected_int_ops=2 * length,
        meta={"length": length},
    )
    return prog, ref


def decode_conv2d(prog: ProgramSet, memory) -> np.ndarray:
    return words_int(prog.read_output(memory, "C")).reshape(prog.meta["shape"])


def decode_dotp(prog: ProgramSet, memory) -> int:
    return int(words_int(prog.read_output(memory, "R"))[0])
