"""MMSE detection: per-subcarrier Cholesky solve of (H^H H + s2 I) x = H^H y.

One subcarrier problem runs on one core (subcarrier k on core ``k % n_cores``),
so the cores never communicate. Per subcarrier the program

1. builds the lower triangle of the Gram matrix with widening CMACs on the
   C16 channel (the noise variance enters as the accumulator's initial value
   on the diagonal) and parks it in a per-core scratch area,
2. factors it row by row in C32 (``L[i][j] = (G[i][j] - sum L[i][k] L[j][k]^*)
   / L[j][j]``) using the tile-shared FSQRT/FDIV unit for the diagonal, and
   keeps only the reciprocal of each diagonal entry,
3. for each right-hand side forms ``z = H^H y``, runs forward and backward
   substitution and stores the C16-rounded solution.

:func:`mmse_reference` replays exactly the same operation sequence over all
subcarriers at once.
"""

from __future__ import annotations

import numpy as np

from .. import softnum as sn
from ..core import FLOPS, alu, compute, li, load, store
from ..memfabric import Topology
from .program import ConfigError, L1Allocator, OutputRegion, ProgramSet

EPS_REG = 2.0 ** -20  # diagonal loading used when a zero noise variance is requested

R_ONE = 29
R_ZERO = 30
R_ACC = 16
R_INV = 21
R_DIAG = 22
POOL = (17, 18, 19, 20)   # rotating load destinations
Y_REGS = (23, 24)
PACK = 25
MAX_DIM = 16


def effective_sigma2(sigma2: float) -> float:
    return float(sn.fround32(sigma2 if sigma2 > 0 else EPS_REG))


# ---------------------------------------------------------------------------
# functional reference
# ---------------------------------------------------------------------------
def mmse_reference(h, y, sigma2: float):
    """Bit-exact model of the solver program.

    ``h`` is (K, m, n) and ``y`` is (R, K, m), both with C16 lanes. Returns
    ``(x, bad)`` where ``x`` is (R, K, n) with C16 lanes and ``bad`` flags
    subcarriers whose factorization broke down (non-finite output).
    """
    h = sn.c16_v(h)
    y = sn.c16_v(y)
    K, m, n = h.shape
    s2 = effective_sigma2(sigma2)
    zero = np.zeros(K, dtype=complex)
    gram = {}
    for i in range(n):
        for j in range(i + 1):
            acc = zero + (s2 if i == j else 0.0)
            for r in range(m):
                acc = sn.cmac_widening_v(acc, h[:, r, i], h[:, r, j], conj_a=True)
            gram[i, j] = acc
    lo = {}
    inv = []
    with np.errstate(all="ignore"):
        for i in range(n):
            for j in range(i + 1):
                acc = gram[i, j]
                for k in range(j):
                    acc = sn.cmac32_v(acc, lo[i, k], lo[j, k], conj_b=True, negate=True)
                if j < i:
                    lo[i, j] = sn.cscale32_v(acc, inv[j])
                else:
                    inv.append(sn.fdiv_v(1.0, sn.fsqrt_v(acc.real)))
        xs = np.zeros((y.shape[0], K, n), dtype=complex)
        for s in range(y.shape[0]):
            v = [zero.copy() for _ in range(n)]
            for r in range(m):
                for i in range(n):
                    v[i] = sn.cmac_widening_v(v[i], h[:, r, i], y[s, :, r], conj_a=True)
            for i in range(n):
                for k in range(i):
                    v[i] = sn.cmac32_v(v[i], lo[i, k], v[k], negate=True)
                v[i] = sn.cscale32_v(v[i], inv[i])
            for i in reversed(range(n)):
                for k in range(i + 1, n):
                    v[i] = sn.cmac32_v(v[i], v[k], lo[k, i], conj_b=True, negate=True)
                v[i] = sn.cscale32_v(v[i], inv[i])
            for i in range(n):
                xs[s, :, i] = sn.c32_pack16_v(v[i])
    bad = ~np.all(np.isfinite(xs), axis=(0, 2))
    return xs, bad


# ---------------------------------------------------------------------------
# program generation
# ---------------------------------------------------------------------------
def _pipelined(items, ahead: int = len(POOL)):
    """Emit ``(load_op_factory, consume)`` items with loads running ``ahead``
    items early through the rotating :data:`POOL` registers."""
    ops = []
    regs = POOL[:ahead]
    for t in range(min(ahead, len(items))):
        ops.append(items[t][0](regs[t % ahead]))
    for t, (_, consume) in enumerate(items):
        ops += consume(regs[t % ahead])
        if t + ahead < len(items):
            ops.append(items[t + ahead][0](regs[(t + ahead) % ahead]))
    return ops


def _ld(addr, wide=False):
    return lambda reg: load(reg, R_ZERO, addr, wide=wide)


def _subcarrier_ops(m, n, n_rhs, s2, h_at, y_at, x_at, g_at, inv_at):
    ops = []
    # 1. Gram matrix, lower triangle, one H column held in registers
    for i in range(n):
        ops += [load(r, R_ZERO, h_at(r, i)) for r in range(m)]
        for j in range(i + 1):
            ops.append(li(R_ACC, (s2, 0.0) if i == j else (0.0, 0.0), tag="acc"))
            if i == j:
                ops += [compute("CMAC", R_ACC, R_ACC, r, r, conj=True) for r in range(m)]
            else:
                ops += _pipelined([(_ld(h_at(r, j)), lambda t, r=r: [compute("CMAC", R_ACC, R_ACC, r, t, conj=True)])
                                   for r in range(m)])
            ops.append(store(R_ACC, R_ZERO, g_at(i, j), wide=True))
    # 2. Cholesky, row i of L kept in registers 0..i-1
    for i in range(n):
        for j in range(i + 1):
            items = [(_ld(g_at(i, j), True), lambda t: [alu("mv", R_ACC, t)])]
            items += [(_ld(g_at(j, k), True),
                       lambda t, k=k: [compute("CMAC32", R_ACC, R_ACC, k, t, conj=True, negate=True)])
                      for k in range(j)]
            if j < i:
                items.append((_ld(inv_at(j)), lambda t, j=j: [compute("CSCALE32", j, R_ACC, t),
                                                             store(j, R_ZERO, g_at(i, j), wide=True)]))
                ops += _pipelined(items)
            else:
                ops += _pipelined(items)
                ops += [compute("FSQRT", R_DIAG, R_ACC), compute("FDIV", R_INV, R_ONE, R_DIAG),
                        store(R_INV, R_ZERO, inv_at(i))]
    # 3. solves
    for s in range(n_rhs):
        ops += [li(i, (0.0, 0.0), tag="acc") for i in range(n)]
        ops.append(load(Y_REGS[0], R_ZERO, y_at(s, 0)))
        for r in range(m):
            yr = Y_REGS[r % 2]
            if r + 1 < m:
                ops.append(load(Y_REGS[(r + 1) % 2], R_ZERO, y_at(s, r + 1)))
            ops += _pipelined([(_ld(h_at(r, i)), lambda t, i=i, yr=yr: [compute("CMAC", i, i, t, yr, conj=True)])
                               for i in range(n)])
        items = []
        for i in range(n):
            items += [(_ld(g_at(i, k), True), lambda t, i=i, k=k: [compute("CMAC32", i, i, t, k, negate=True)])
                      for k in range(i)]
            items.append((_ld(inv_at(i)), lambda t, i=i: [compute("CSCALE32", i, i, t)]))
        for i in reversed(range(n)):
            items += [(_ld(g_at(k, i), True), lambda t, i=i, k=k: [compute("CMAC32", i, i, k, t, conj=True, negate=True)])
                      for k in range(i + 1, n)]
            items.append((_ld(inv_at(i)), lambda t, i=i: [compute("CSCALE32", i, i, t)]))
        ops += _pipelined(items)
        for i in range(n):
            ops += [compute("CPACK", PACK, i), store(PACK, R_ZERO, x_at(s, i), tag="output")]
    return ops


def build_mmse_solver(n_b: int, n_tx: int, n_sc: int, n_rhs: int = 1, h=None, y=None, sigma2: float = 0.0,
                      seed: int = 0, topo: Topology = Topology()):
    """Solver program for ``n_sc`` independent subcarrier problems.

    ``h`` is (n_sc, n_b, n_tx) and ``y`` is (n_rhs, n_sc, n_b). Returns
    ``(program, (x_ref, bad_ref))`` with the reference from
    :func:`mmse_reference`.
    """
    if not (1 <= n_tx <= n_b <= MAX_DIM):
        raise ConfigError(f"need 1 <= n_tx <= n_b <= {MAX_DIM}")
    if n_sc < 1 or n_rhs < 1:
        raise ConfigError("need at least one subcarrier and one right-hand side")
    rng = np.random.default_rng(seed)
    if h is None:
        h = (rng.standard_normal((n_sc, n_b, n_tx)) + 1j * rng.standard_normal((n_sc, n_b, n_tx))) / np.sqrt(2)
    if y is None:
        y = (rng.standard_normal((n_rhs, n_sc, n_b)) + 1j * rng.standard_normal((n_rhs, n_sc, n_b))) / np.sqrt(2)
    h = sn.c16_v(np.asarray(h).reshape(n_sc, n_b, n_tx))
    y = sn.c16_v(np.asarray(y).reshape(n_rhs, n_sc, n_b))
    s2 = effective_sigma2(sigma2)
    m, n = n_b, n_tx
    ncores = topo.n_cores
    alloc = L1Allocator(topo)
    # odd pitches keep concurrently working cores on different banks
    hp = m * n | 1
    h_img = np.zeros((n_sc, hp), dtype=np.uint32)
    h_img[:, :m * n] = sn.c16_words_v(h).reshape(n_sc, m * n)
    h_base = alloc.alloc(n_sc * hp, h_img)
    yp = m | 1
    y_img = np.zeros((n_rhs, n_sc, yp), dtype=np.uint32)
    y_img[:, :, :m] = sn.c16_words_v(y)
    y_base = alloc.alloc(n_rhs * n_sc * yp, y_img)
    x_base = alloc.alloc(n_rhs * n_sc * n)
    tri = n * (n + 1) // 2
    sp = (2 * tri + n) | 1
    scratch = alloc.alloc(ncores * sp)

    def tri_idx(i, j):
        return i * (i + 1) // 2 + j

    streams = [[] for _ in range(ncores)]
    for c in range(ncores):
        ks = range(c, n_sc, ncores)
        if not ks:
            continue
        sbase = scratch + 4 * c * sp
        ops = [li(R_ZERO, 0), li(R_ONE, 1.0)]
        for k in ks:
            ops += _subcarrier_ops(
                m, n, n_rhs, s2,
                h_at=lambda r, i, k=k: h_base + 4 * (k * hp + r * n + i),
                y_at=lambda s, r, k=k: y_base + 4 * ((s * n_sc + k) * yp + r),
                x_at=lambda s, i, k=k: x_base + 4 * ((s * n_sc + k) * n + i),
                g_at=lambda i, j: sbase + 8 * tri_idx(i, j),
                inv_at=lambda i: sbase + 8 * tri + 4 * i,
            )
        streams[c] = ops
    prog = ProgramSet(
        name=f"mmse_{n_b}x{n_tx}_{n_sc}sc_{n_rhs}rhs",
        streams=streams,
        image=alloc.image,
        outputs=[OutputRegion("X", x_base, n_rhs * n_sc * n)],
        meta={"n_b": n_b, "n_tx": n_tx, "n_sc": n_sc, "n_rhs": n_rhs, "sigma2": s2},
    )
    prog.expected_flops = sum(FLOPS.get(op.kind, 0) for st in prog.streams for op in st if op.op == "compute")
    return prog, mmse_reference(h, y, sigma2)


def decode_output(prog: ProgramSet, memory) -> np.ndarray:
    w = prog.read_output(memory, "X")
    meta = prog.meta
    return sn.c16_from_words_v(w).reshape(meta["n_rhs"], meta["n_sc"], meta["n_tx"])
