"""Integer / complex MatMul and the beamforming CMatMul."""

from __future__ import annotations

import numpy as np

from .. import softnum as sn
from ..memfabric import Topology
from .program import ConfigError, L1Allocator, OutputRegion, ProgramSet
from .systolic import GridProblem, baseline_streams, systolic_streams

VARIANTS = ("baseline", "systolic")


def int_words(x) -> np.ndarray:
    return (np.asarray(x, dtype=np.int64) & 0xFFFFFFFF).astype(np.uint32)


def words_int(w) -> np.ndarray:
    return np.asarray(w, dtype=np.uint32).view(np.int32).astype(np.int64)


def _grid_for(m: int, p: int, n_cores: int) -> tuple[int, int]:
    """Largest square-ish grid that divides the output."""
    for rows, cols in ((8, 8), (4, 16), (16, 4), (4, 4), (2, 2), (1, 1)):
        if rows * cols <= n_cores and m % rows == 0 and p % cols == 0:
            return rows, cols
    raise ConfigError(f"output {m}x{p} cannot be split over the core grid")


def matmul_reference(a, b, elem: str) -> np.ndarray:
    """Functional reference with the simulator's exact rounding sequence."""
    if elem == "int32":
        c = np.asarray(a, dtype=np.int64) @ np.asarray(b, dtype=np.int64)
        return ((c + 2**31) % 2**32) - 2**31
    a = sn.c16_v(a)
    b = sn.c16_v(b)
    acc = np.zeros((a.shape[0], b.shape[1]), dtype=complex)
    for k in range(a.shape[1]):
        acc = sn.cmac_widening_v(acc, a[:, k:k + 1], b[k:k + 1, :])
    return sn.c32_pack16_v(acc)


def _stagger(i, j, n_el, bw_rows, bw_cols):
    # Rotate the element order per core: grid-row neighbours start on
    # different output rows, grid-column neighbours on different columns.
    order = []
    for rr in range(bw_rows):
        for pp in range(bw_cols):
            r = (rr + j) % bw_rows
            q = (pp + i) % bw_cols
            order.append(r * bw_cols + q)
    return order


def _mac_program(name, a_words, b_words, m, n, p, variant, complex_, topo, grid=None, meta=None):
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    rows, cols = grid or _grid_for(m, p, topo.n_cores)
    if m % rows or p % cols:
        raise ConfigError(f"{m}x{p} output not divisible by grid {rows}x{cols}")
    alloc = L1Allocator(topo)
    # A rows are padded by one word so equal columns of different rows fall
    # into different banks.
    pitch = n + 1
    a_pad = np.zeros((m, pitch), dtype=np.uint32)
    a_pad[:, :n] = np.asarray(a_words, dtype=np.uint32).reshape(m, n)
    a_base = alloc.alloc(m * pitch, a_pad)
    b_base = alloc.alloc(n * p, b_words)
    c_base = alloc.alloc(m * p)
    br, bc = m // rows, p // cols
    K = n

    def a_addr(i, t):
        e, k = divmod(t, K)
        r = i * br + e // bc
        return a_base + 4 * (r * pitch + k)

    # Column blocks are walked with a per-column rotation: without it the
    # column-stream loads of blocks 256 words apart hit the same bank.
    def col_of(j, e):
        return j * bc + (e + j) % bc

    def b_addr(j, t):
        e, k = divmod(t, K)
        return b_base + 4 * (k * p + col_of(j, e))

    def c_addr(i, j, e):
        return c_base + 4 * ((i * br + e // bc) * p + col_of(j, e))

    prob = GridProblem(rows, cols, br * bc * K, K, a_addr, b_addr, c_addr, complex_)
    if variant == "systolic":
        streams = systolic_streams(prob, topo)
    else:
        streams = baseline_streams(prob, topo, stagger=lambda i, j, ne: _stagger(i, j, ne, br, bc))
    macs = m * n * p
    return ProgramSet(
        name=name,
        streams=streams,
        image=alloc.image,
        outputs=[OutputRegion("C", c_base, m * p)],
        expected_flops=8 * macs if complex_ else 0,
        expected_int_ops=0 if complex_ else 2 * macs,
        meta={"variant": variant, "grid": [rows, cols], "m": m, "n": n, "p": p, **(meta or {})},
    )


def build_matmul(m: int, n: int, p: int, variant: str = "systolic", elem: str = "int32",
                 a=None, b=None, seed: int = 0, topo: Topology = Topology(), grid=None):
    """C[m x p] = A[m x n] B[n x p] on the cluster.

    Returns ``(program, reference)`` where ``reference`` is the expected C
    (int64 array for int32, complex array with F16 lanes for c16).
    """
    if min(m, n, p) < 1:
        raise ConfigError("matrix dimensions must be positive")
    rng = np.random.default_rng(seed)
    if elem == "int32":
        a = rng.integers(-1000, 1000, (m, n)) if a is None else np.asarray(a)
        b = rng.integers(-1000, 1000, (n, p)) if b is None else np.asarray(b)
        aw, bw = int_words(a), int_words(b)
        complex_ = False
    elif elem == "c16":
        if a is None:
            a = rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))
        if b is None:
            b = rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))
        a, b = sn.c16_v(a), sn.c16_v(b)
        aw, bw = sn.c16_words_v(a), sn.c16_words_v(b)
        complex_ = True
    else:
        raise ConfigError(f"unknown element type {elem!r}")
    prog = _mac_program(f"matmul_{elem}_{m}x{n}x{p}_{variant}", aw, bw, m, n, p, variant, complex_, topo, grid,
                        meta={"elem": elem})
    return prog, matmul_reference(a, b, elem)


def decode_output(prog: ProgramSet, memory: np.ndarray, shape, elem: str) -> np.ndarray:
    w = prog.read_output(memory, "C")
    return (words_int(w) if elem == "int32" else sn.c16_from_words_v(w)).reshape(shape)


def build_cmatmul(n_b: int, n_rx: int, n_sc: int, variant: str = "systolic", bf=None, y=None, seed: int = 0,
                  topo: Topology = Topology()):
    """Beamforming Z[n_b x n_sc] = B[n_b x n_rx] Y[n_rx x n_sc] with widening CMACs."""
    prog, ref = build_matmul(n_b, n_rx, n_sc, variant, "c16", a=bf, b=y, seed=seed, topo=topo,
                             grid=_bf_grid(n_b, n_sc, topo))
    prog.name = f"cmatmul_{n_b}x{n_rx}x{n_sc}_{variant}"
    return prog, ref


def _bf_grid(n_b: int, n_sc: int, topo: Topology):
    # One grid row per beam; the subcarriers are split across the columns.
    if n_b > topo.n_cores or topo.n_cores % n_b:
        raise ConfigError(f"{n_b} beams do not tile the cluster")
    cols = topo.n_cores // n_b
    if n_sc % cols:
        raise ConfigError(f"{n_sc} subcarriers not divisible by {cols} grid columns")
    return n_b, cols
