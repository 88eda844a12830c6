"""Output-stationary systolic MAC grid shared by the MatMul and CMatMul builders.

Grid cell (i, j) owns a block of outputs and performs one MAC per step. The
row operand stream of grid row i flows along the row, the column operand
stream of column j flows down the column. Each stream is loaded from L1 by a
single core (normally the edge core at its head) whose loads write straight
into a QLR; every other core pops the value from its input QLR, which
forwards it to the next core of the line.

Row streams run left to right and column streams top to bottom, so the
cores' wait-for graph is acyclic (a ring or mixed directions would let the
in-order cores wait on each other in a cycle).
"""

from __future__ import annotations

from dataclasses import dataclass

from ..core import QlrConfig, alu, barrier, compute, li, load, qlr_cfg, store
from ..memfabric import Topology
from .program import ConfigError

# Register conventions
R_ZERO = 12       # zero base for absolute addressing
R_CNT = 13        # loop counter (control overhead only)
R_ACC = 10
R_PACK = 11
QA_IN, QB_IN, QA_OUT, QB_OUT = 20, 21, 22, 23


def grid_placement(rows: int, cols: int, topo: Topology = Topology()) -> dict[tuple[int, int], int]:
    """Tile-major placement: 2x2 grid blocks per tile, 4x4 blocks per group.

    Neighbouring grid cells therefore share a tile whenever possible, which
    makes most QLR links the cheap intra-tile kind.
    """
    if rows * cols > topo.n_cores:
        raise ConfigError(f"grid {rows}x{cols} needs more than {topo.n_cores} cores")
    if rows % 4 or cols % 4:
        # Small grids (used for tiny problems) are placed row-major.
        return {(i, j): i * cols + j for i in range(rows) for j in range(cols)}
    gcols = cols // 4
    place = {}
    for i in range(rows):
        for j in range(cols):
            group = (i // 4) * gcols + j // 4
            tile = ((i % 4) // 2) * 2 + (j % 4) // 2
            place[(i, j)] = group * topo.cores_per_tile * topo.tiles_per_group + tile * topo.cores_per_tile + (i % 2) * 2 + j % 2
    return place


@dataclass
class GridProblem:
    """Address functions describing one output-stationary MAC problem.

    ``a_addr(i, t)`` / ``b_addr(j, t)`` give the operand of step ``t`` for
    grid row i / column j; ``c_addr(i, j, e)`` the output address of the
    e-th element of cell (i, j). Every element accumulates ``k_len`` steps.
    """

    rows: int
    cols: int
    steps: int
    k_len: int
    a_addr: object
    b_addr: object
    c_addr: object
    complex_: bool

    def __post_init__(self):
        if self.steps % self.k_len:
            raise ConfigError("steps must be a multiple of the accumulation length")


def _acc_init(p: GridProblem):
    return li(R_ACC, (0.0, 0.0) if p.complex_ else 0, tag="acc")


def _mac(p: GridProblem, a: int, b: int, nofwd=()):
    if p.complex_:
        return compute("CMAC", R_ACC, R_ACC, a, b, nofwd=nofwd)
    return compute("IMAC", R_ACC, R_ACC, a, b, nofwd=nofwd)


def _finish(p: GridProblem, addr: int) -> list:
    if p.complex_:
        return [compute("CPACK", R_PACK, R_ACC), store(R_PACK, R_ZERO, addr)]
    return [store(R_ACC, R_ZERO, addr)]


def _control() -> list:
    return [alu("addi", R_CNT, R_CNT, imm=1, tag="ctrl"), alu("branch", -1, R_CNT, tag="ctrl")]


def _lines(rows: int, cols: int):
    """Per-row and per-column core orders, source first, plus each line's loader.

    All row streams flow left to right and all column streams top to bottom,
    so the wait-for graph between cores stays acyclic. The top-left cell is
    the source of two lines; its column stream is loaded by its tile-mate
    (1, 1) so that no core loads more than one stream.
    """
    row_lines = [[(i, j) for j in range(cols)] for i in range(rows)]
    col_lines = [[(i, j) for i in range(rows)] for j in range(cols)]
    row_loader = [(i, 0) for i in range(rows)]
    col_loader = [(0, j) for j in range(cols)]
    if rows > 1 and cols > 1:
        col_loader[0] = (1, 1)
    return row_lines, col_lines, row_loader, col_loader


def systolic_streams(p: GridProblem, topo: Topology = Topology(), lookahead: int = 4) -> list:
    R, C, T, K = p.rows, p.cols, p.steps, p.k_len
    place = grid_placement(R, C, topo)
    row_lines, col_lines, row_loader, col_loader = _lines(R, C)
    streams = [[] for _ in range(topo.n_cores)]
    for (i, j), core in place.items():
        ops = streams[core]
        ops += [li(R_ZERO, 0), li(R_CNT, 0)]
        inject = []  # (out_reg, address function of t) per loaded stream
        for line, loader, q_in in ((row_lines[i], row_loader[i], QA_IN), (col_lines[j], col_loader[j], QB_IN)):
            pos = line.index((i, j))
            nxt = place[line[pos + 1]] if pos + 1 < len(line) else -1
            src = place[line[pos - 1]] if pos > 0 else place[loader]
            ops.append(qlr_cfg(QlrConfig(q_in, "input", src, T, forward_core=nxt,
                                         forward_reg=q_in if nxt >= 0 else -1)))
        # Streams this core loads (the column-0 stream is fed by a non-head core).
        for line_set, loaders, q_in, q_out, fn_of in (
                (row_lines, row_loader, QA_IN, QA_OUT, lambda x: (lambda t: p.a_addr(x, t))),
                (col_lines, col_loader, QB_IN, QB_OUT, lambda x: (lambda t: p.b_addr(x, t)))):
            for x, loader in enumerate(loaders):
                if loader == (i, j):
                    ops.append(qlr_cfg(QlrConfig(q_out, "output", place[line_set[x][0]], T, peer_reg=q_in)))
                    inject.append((q_out, fn_of(x)))
        # lookahead must not exceed the linked queue depth, otherwise the next
        # load would block on a queue that only a later MAC drains
        la = min(lookahead, T)
        for reg, fn in inject:
            ops += [load(reg, R_ZERO, fn(t), tag="inject") for t in range(la)]
        for t in range(T):
            if t % K == 0:
                ops.append(_acc_init(p))
            ops.append(_mac(p, QA_IN, QB_IN))
            if t + la < T:
                ops += [load(reg, R_ZERO, fn(t + la), tag="inject") for reg, fn in inject]
            if t % K == K - 1:
                ops += _finish(p, p.c_addr(i, j, t // K))
                ops += _control()
    return streams


def baseline_streams(p: GridProblem, topo: Topology = Topology(), unroll: int = 4, stagger=None) -> list:
    """Classic parallel version: every core loads both operands of every MAC.

    The k-loop is unrolled by ``unroll`` with loads for chunk g+1 issued
    before the MACs of chunk g. Accumulation order over k is unchanged, so
    results are bit-identical to :func:`systolic_streams`. ``stagger(i, j,
    n_el)`` optionally permutes the element order of a core to spread bank
    traffic.
    """
    R, C, T, K = p.rows, p.cols, p.steps, p.k_len
    place = grid_placement(R, C, topo)
    streams = [[] for _ in range(topo.n_cores)]
    n_el = T // K
    regs_a = [(1, 2, 3, 4), (5, 6, 7, 8)]
    regs_b = [(14, 15, 16, 17), (18, 19, 24, 25)]
    for (i, j), core in place.items():
        ops = streams[core]
        ops += [li(R_ZERO, 0), li(R_CNT, 0)]
        order = stagger(i, j, n_el) if stagger else range(n_el)
        for e in order:
            chunks = [list(range(k0, min(k0 + unroll, K))) for k0 in range(0, K, unroll)]
            ops.append(_acc_init(p))

            def loads(g):
                out = []
                for u, k in enumerate(chunks[g]):
                    t = e * K + k
                    out.append(load(regs_a[g % 2][u], R_ZERO, p.a_addr(i, t)))
                    out.append(load(regs_b[g % 2][u], R_ZERO, p.b_addr(j, t)))
                return out

            ops += loads(0)
            for g in range(len(chunks)):
                if g + 1 < len(chunks):
                    ops += loads(g + 1)
                for u in range(len(chunks[g])):
                    ops.append(_mac(p, regs_a[g % 2][u], regs_b[g % 2][u]))
                ops += _control()
            ops += _finish(p, p.c_addr(i, j, e))
        ops.append(barrier(0, tag="sync"))
    return streams
