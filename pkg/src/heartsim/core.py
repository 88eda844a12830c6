"""Core micro-architecture: the abstract micro-op ISA, queue-linked registers
(QLRs), the load scoreboard and the tile-shared division/square-root unit.

The per-cycle issue logic lives in :func:`core_step`; the cluster engine in
:mod:`heartsim.cluster` calls it once per core per cycle.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

from . import softnum as sn

N_REGS = 32

# Compute kinds. The first group maps one-to-one onto the domain instructions
# (MAC, complex arithmetic, widening dot-product, three-term add, div/sqrt);
# the rest are SIMD complex helpers and the F32 complex ops of the solver.
COMPUTE_KINDS = (
    "ALU", "IMAC", "CMAC", "CMUL", "FADD3", "FDIV", "FSQRT",
    "CADD", "CSUB", "CADDJ", "CSUBJ", "CMAC32", "CSCALE32", "CPACK", "CWIDEN",
)

FLOPS = {
    "CMAC": 8, "CMUL": 6, "CADD": 2, "CSUB": 2, "CADDJ": 2, "CSUBJ": 2,
    "FADD3": 2, "FDIV": 1, "FSQRT": 1, "CMAC32": 8, "CSCALE32": 2,
}
INT_OPS = {"IMAC": 2}

_NOT_ARRIVED = 1 << 62

STALL_CATEGORIES = ("raw_hazard", "qlr_empty", "qlr_full", "mem_retry", "divsqrt_busy", "barrier")


class SimulatorFault(Exception):
    """A program bug detected by the simulator (bad register use, bad QLR wiring, ...)."""


class DeadlockError(SimulatorFault):
    pass


@dataclass(frozen=True)
class QlrConfig:
    """Configuration of one queue-linked register.

    ``peer_core`` is the consumer for an output QLR and the expected producer
    for an input QLR. ``peer_reg`` names the consumer-side register of an
    output link. An input QLR may forward every popped value to
    ``(forward_core, forward_reg)``, which is how systolic streams pass
    operands along without extra instructions.
    """

    reg: int
    direction: str  # "input" | "output"
    peer_core: int
    request_count: int
    peer_reg: int = -1
    forward_core: int = -1
    forward_reg: int = -1

    def __post_init__(self):
        if self.direction not in ("input", "output"):
            raise ValueError(f"bad QLR direction {self.direction!r}")
        if self.request_count <= 0:
            raise ValueError("QLR request_count must be positive")
        if self.direction == "output" and self.peer_reg < 0:
            raise ValueError("output QLR needs the consumer register")


@dataclass(frozen=True, slots=True)
class MicroOp:
    """One abstract instruction.

    ``op`` is one of ``compute``, ``load``, ``store``, ``li``, ``qlr_cfg``,
    ``barrier``. Memory ops address ``regs[addr_reg] + offset`` and then add
    ``stride`` to the address register (load/store post-increment).
    """

    op: str
    kind: str = ""
    dst: int = -1
    srcs: tuple = ()
    imm: object = None
    addr_reg: int = -1
    offset: int = 0
    stride: int = 0
    wide: bool = False
    conj: bool = False
    negate: bool = False
    nofwd: tuple = ()
    cfg: QlrConfig | None = None
    tag: str = ""

    def __post_init__(self):
        regs = list(self.srcs)
        if self.dst >= 0:
            regs.append(self.dst)
        if self.addr_reg >= 0:
            regs.append(self.addr_reg)
        for r in regs:
            if not 0 <= r < N_REGS:
                raise ValueError(f"register index {r} out of range")
        if self.stride % 4 or self.offset % 4:
            raise ValueError("memory offsets and strides must be word aligned")
        if self.op == "compute" and self.kind not in COMPUTE_KINDS:
            raise ValueError(f"unknown compute kind {self.kind!r}")

    def listing(self) -> str:
        if self.op == "compute":
            s = f"{self.kind.lower():8s} r{self.dst if self.dst >= 0 else '-'}, " + ", ".join(f"r{r}" for r in self.srcs)
            if self.kind == "ALU":
                s += f"  ; {self.imm}"
        elif self.op == "load":
            s = f"{'ld.w' if self.wide else 'ld':8s} r{self.dst}, {self.offset}(r{self.addr_reg})" + (f" +{self.stride}" if self.stride else "")
        elif self.op == "store":
            s = f"{'st.w' if self.wide else 'st':8s} r{self.srcs[0]}, {self.offset}(r{self.addr_reg})" + (f" +{self.stride}" if self.stride else "")
        elif self.op == "li":
            s = f"{'li':8s} r{self.dst}, {self.imm!r}"
        elif self.op == "qlr_cfg":
            c = self.cfg
            s = f"{'qlr.cfg':8s} r{c.reg} {c.direction} peer={c.peer_core}" + (f".r{c.peer_reg}" if c.peer_reg >= 0 else "") + f" n={c.request_count}"
            if c.forward_core >= 0:
                s += f" fwd={c.forward_core}.r{c.forward_reg}"
        else:
            s = f"{'barrier':8s} {self.imm}"
        return s + (f"  # {self.tag}" if self.tag else "")


# Shorthand constructors used by the kernel builders ------------------------
def alu(fn: str, dst: int, *srcs: int, imm=None, tag: str = "") -> MicroOp:
    return MicroOp("compute", "ALU", dst, tuple(srcs), imm=(fn, imm), tag=tag)


def compute(kind: str, dst: int, *srcs: int, conj=False, negate=False, nofwd=(), tag: str = "") -> MicroOp:
    return MicroOp("compute", kind, dst, tuple(srcs), conj=conj, negate=negate, nofwd=tuple(nofwd), tag=tag)


def load(dst: int, addr_reg: int, offset: int = 0, stride: int = 0, wide=False, tag: str = "") -> MicroOp:
    return MicroOp("load", dst=dst, addr_reg=addr_reg, offset=offset, stride=stride, wide=wide, tag=tag)


def store(src: int, addr_reg: int, offset: int = 0, stride: int = 0, wide=False, tag: str = "") -> MicroOp:
    return MicroOp("store", srcs=(src,), addr_reg=addr_reg, offset=offset, stride=stride, wide=wide, tag=tag)


def li(dst: int, value, tag: str = "") -> MicroOp:
    return MicroOp("li", dst=dst, imm=value, tag=tag)


def qlr_cfg(cfg: QlrConfig, tag: str = "") -> MicroOp:
    return MicroOp("qlr_cfg", cfg=cfg, tag=tag)


def barrier(bid: int = 0, tag: str = "") -> MicroOp:
    return MicroOp("barrier", imm=bid, tag=tag)


# State ----------------------------------------------------------------------
class InQueue:
    """Consumer side of a QLR link: the FIFO plus its active configuration."""

    __slots__ = ("cfg", "q", "capacity", "popped")

    def __init__(self):
        self.cfg: QlrConfig | None = None
        self.q: deque = deque()  # [arrival_cycle, value]
        self.capacity = 0
        self.popped = 0


class OutLink:
    __slots__ = ("cfg", "pushed")

    def __init__(self, cfg: QlrConfig):
        self.cfg = cfg
        self.pushed = 0


@dataclass
class CoreCounters:
    issued: dict = field(default_factory=dict)
    stalls: dict = field(default_factory=lambda: {c: 0 for c in STALL_CATEGORIES})
    idle: int = 0
    flops: int = 0
    int_ops: int = 0
    tags: dict = field(default_factory=dict)

    @property
    def n_issued(self) -> int:
        return sum(self.issued.values())


class CoreState:
    def __init__(self, cid: int, ops: list, init_regs: dict | None = None):
        self.cid = cid
        self.ops = ops
        self.pc = 0
        self.regs: list = [None] * N_REGS
        for r, v in (init_regs or {}).items():
            self.regs[r] = v
        self.pending = [False] * N_REGS
        self.outstanding = 0
        self.port_busy = 0  # requests issued but not yet granted
        self.qin: dict[int, InQueue] = {}
        self.qout: dict[int, OutLink] = {}
        self.barrier_seen: dict[int, int] = {}
        self.barrier_release = -1  # cycle at which the current barrier opens
        self.barrier_key = None
        self.wide_buf: dict[int, list] = {}
        self.stall_reason = "none"
        self.ctr = CoreCounters()

    @property
    def halted(self) -> bool:
        return self.pc >= len(self.ops) and self.barrier_key is None


class DivSqrtUnit:
    """One per tile, shared round-robin by the tile's cores."""

    def __init__(self, cores: list[int]):
        self.cores = cores
        self.busy_until = 0
        self.waiting: set[int] = set()
        self.next_priority = 0  # position in self.cores

    def try_acquire(self, core: int, now: int, latency: int) -> bool:
        if self.busy_until > now:
            self.waiting.add(core)
            return False
        contenders = self.waiting | {core}
        n = len(self.cores)
        winner = min(contenders, key=lambda c: (self.cores.index(c) - self.next_priority) % n)
        if winner != core:
            self.waiting.add(core)
            return False
        self.waiting.discard(core)
        self.next_priority = (self.cores.index(core) + 1) % n
        self.busy_until = now + latency
        return True


# Issue logic -------------------------------------------------------------------
def _execute(op: MicroOp, vals: list):
    k = op.kind
    if k == "CMAC":
        return sn.cmac_widening(vals[0], vals[1], vals[2], op.conj)
    if k == "CMUL":
        return sn.cmul16(vals[0], vals[1], op.conj)
    if k == "CADD":
        return sn.cadd16(vals[0], vals[1])
    if k == "CSUB":
        return sn.csub16(vals[0], vals[1])
    if k == "CADDJ":
        return sn.caddj16(vals[0], vals[1])
    if k == "CSUBJ":
        return sn.csubj16(vals[0], vals[1])
    if k == "IMAC":
        r = (vals[0] + _s32(vals[1]) * _s32(vals[2])) & 0xFFFFFFFF
        return r - (1 << 32) if r & 0x80000000 else r
    if k == "ALU":
        fn, imm = op.imm
        if fn == "mv":
            return vals[0]
        if fn == "addi":
            return _s32(vals[0] + imm)
        if fn == "add":
            return _s32(vals[0] + vals[1])
        if fn == "branch":
            return None
        if fn == "czero":
            return sn.C32_ZERO
        raise SimulatorFault(f"unknown ALU function {fn!r}")
    if k == "CMAC32":
        return sn.cmac32(vals[0], vals[1], vals[2], op.conj, op.negate)
    if k == "CSCALE32":
        return sn.cscale32(vals[0], sn.as_f32(vals[1]))
    if k == "CPACK":
        return sn.c32_pack16(vals[0])
    if k == "CWIDEN":
        return sn.c16_widen(vals[0])
    if k == "FADD3":
        return sn.fadd3(sn.as_f32(vals[0]), sn.as_f32(vals[1]), sn.as_f32(vals[2]))
    if k == "FDIV":
        return sn.fdiv(sn.as_f32(vals[0]), sn.as_f32(vals[1]))
    if k == "FSQRT":
        return sn.fsqrt(sn.as_f32(vals[0]))
    raise SimulatorFault(f"unknown compute kind {k}")


def _s32(v: int) -> int:
    v &= 0xFFFFFFFF
    return v - (1 << 32) if v & 0x80000000 else v


def _push_ok(cl, producer: int, core_id: int, reg: int) -> bool:
    """Can ``producer`` enqueue one more value into ``core_id``'s register ``reg``?

    A link whose consumer has not (yet) configured a matching input behaves as
    full: the producer is back-pressured until the consumer catches up.
    """
    iq = cl.cores[core_id].qin.get(reg)
    if iq is None or iq.cfg is None or iq.cfg.peer_core != producer:
        return False
    if len(iq.q) >= iq.capacity:
        return False
    return iq.popped + len(iq.q) < iq.cfg.request_count


def _push(cl, producer: int, core_id: int, reg: int, value, now: int) -> None:
    iq = cl.cores[core_id].qin[reg]
    iq.q.append([now + cl.lat.core_core[producer][core_id], value])
    cl.qlr_pushes += 1


def core_step(cl, core: CoreState, now: int) -> None:
    """Try to issue the core's next micro-op at cycle ``now``."""
    ctr = core.ctr
    if core.barrier_key is not None:
        rel = core.barrier_release
        if rel < 0 or now < rel:
            core.stall_reason = "barrier"
            ctr.stalls["barrier"] += 1
            return
        core.barrier_key = None
        core.barrier_release = -1
    if core.pc >= len(core.ops):
        # Halted; idle cycles are derived by the engine at the end of the run.
        core.stall_reason = "none"
        return

    op = core.ops[core.pc]
    kind = op.op
    regs = core.regs
    pending = core.pending
    qin = core.qin

    # ---- operand readiness -------------------------------------------------
    pops = None
    for r in op.srcs:
        iq = qin.get(r)
        if iq is not None and iq.cfg is not None:
            if not iq.q or iq.q[0][0] > now:
                return _stall(core, "qlr_empty")
            if pops is None:
                pops = [r]
            else:
                pops.append(r)
        elif pending[r]:
            return _stall(core, "raw_hazard")
        elif regs[r] is None:
            raise SimulatorFault(f"core {core.cid} pc {core.pc}: read of never-written r{r} ({op.listing()})")
    if op.addr_reg >= 0 and pending[op.addr_reg]:
        return _stall(core, "raw_hazard")
    dst = op.dst
    out_link = None
    if dst >= 0:
        if pending[dst]:
            return _stall(core, "raw_hazard")
        out_link = core.qout.get(dst)
        if out_link is not None:
            c = out_link.cfg
            if not _push_ok(cl, core.cid, c.peer_core, c.peer_reg):
                return _stall(core, "qlr_full")
            if kind == "load" and op.wide:
                raise SimulatorFault(f"core {core.cid}: wide load into output QLR r{dst}")
    fwd = None
    if pops:
        for r in pops:
            c = qin[r].cfg
            if c.forward_core >= 0 and r not in op.nofwd:
                if not _push_ok(cl, core.cid, c.forward_core, c.forward_reg):
                    return _stall(core, "qlr_full")
                if fwd is None:
                    fwd = [r]
                else:
                    fwd.append(r)

    # ---- structural hazards --------------------------------------------------
    if kind == "load" or kind == "store":
        if core.port_busy:
            return _stall(core, "mem_retry")
        if kind == "load" and core.outstanding >= cl.cfg.scoreboard_depth:
            return _stall(core, "mem_retry")
    elif kind == "compute" and (op.kind == "FDIV" or op.kind == "FSQRT"):
        lat = cl.cfg.fdiv_latency if op.kind == "FDIV" else cl.cfg.fsqrt_latency
        if not cl.divsqrt[core.cid // cl.topo.cores_per_tile].try_acquire(core.cid, now, lat):
            return _stall(core, "divsqrt_busy")
    elif kind == "barrier":
        if core.port_busy:
            return _stall(core, "mem_retry")

    # ---- issue -------------------------------------------------------------------
    vals = None
    if op.srcs:
        vals = []
        for r in op.srcs:
            iq = qin.get(r)
            if iq is not None and iq.cfg is not None:
                v = iq.q.popleft()[1]
                iq.popped += 1
                if fwd is not None and r in fwd:
                    _push(cl, core.cid, iq.cfg.forward_core, iq.cfg.forward_reg, v, now)
                if iq.popped >= iq.cfg.request_count:
                    iq.cfg = None
                vals.append(v)
            else:
                vals.append(regs[r])

    if kind == "compute":
        result = _execute(op, vals)
        k = op.kind
        fl = FLOPS.get(k)
        if fl:
            ctr.flops += fl
        elif k == "IMAC":
            ctr.int_ops += 2
        if dst >= 0:
            if k == "FDIV" or k == "FSQRT":
                pending[dst] = True
                lat = cl.cfg.fdiv_latency if k == "FDIV" else cl.cfg.fsqrt_latency
                cl.schedule_writeback(now + lat, core.cid, dst, result)
            else:
                _write(cl, core, dst, result, out_link, now)
    elif kind == "load":
        addr = regs[op.addr_reg] + op.offset
        if out_link is not None:
            # The response is pushed straight into the linked queue; its slot
            # is reserved now so FIFO order follows program order.
            c = out_link.cfg
            slot = [_NOT_ARRIVED, None]
            cl.cores[c.peer_core].qin[c.peer_reg].q.append(slot)
            out_link.pushed += 1
            if out_link.pushed >= c.request_count:
                del core.qout[dst]
            cl.issue_load(core, op, addr, now, slot=slot, consumer=c.peer_core)
        else:
            cl.issue_load(core, op, addr, now)
        if op.stride:
            regs[op.addr_reg] += op.stride
    elif kind == "store":
        addr = regs[op.addr_reg] + op.offset
        cl.issue_store(core, op, addr, vals[0], now)
        if op.stride:
            regs[op.addr_reg] += op.stride
    elif kind == "li":
        _write(cl, core, dst, op.imm, out_link, now)
    elif kind == "qlr_cfg":
        _configure(cl, core, op.cfg)
    elif kind == "barrier":
        cl.barrier_arrive(core, op.imm, now)
    else:
        raise SimulatorFault(f"unknown micro-op {kind}")

    core.pc += 1
    core.stall_reason = "none"
    key = op.kind if kind == "compute" else kind
    ctr.issued[key] = ctr.issued.get(key, 0) + 1
    if op.tag:
        ctr.tags[op.tag] = ctr.tags.get(op.tag, 0) + 1
    cl.progress = now


def _stall(core: CoreState, reason: str) -> None:
    core.stall_reason = reason
    core.ctr.stalls[reason] += 1


def _write(cl, core: CoreState, dst: int, value, out_link: OutLink | None, now: int) -> None:
    if out_link is not None:
        c = out_link.cfg
        _push(cl, core.cid, c.peer_core, c.peer_reg, value, now)
        out_link.pushed += 1
        if out_link.pushed >= c.request_count:
            del core.qout[dst]
    else:
        core.regs[dst] = value


def _configure(cl, core: CoreState, cfg: QlrConfig) -> None:
    if cfg.reg not in cl.cfg.qlr_registers:
        raise SimulatorFault(f"core {core.cid}: r{cfg.reg} is not QLR-capable")
    if cfg.direction == "output":
        if cfg.reg in core.qout or (cfg.reg in core.qin and core.qin[cfg.reg].cfg is not None):
            raise SimulatorFault(f"core {core.cid}: r{cfg.reg} already has an active QLR configuration")
        core.qout[cfg.reg] = OutLink(cfg)
        return
    if cfg.reg in core.qout:
        raise SimulatorFault(f"core {core.cid}: r{cfg.reg} already has an active QLR configuration")
    iq = core.qin.get(cfg.reg)
    if iq is None:
        iq = core.qin[cfg.reg] = InQueue()
    elif iq.cfg is not None or iq.q:
        raise SimulatorFault(f"core {core.cid}: r{cfg.reg} reconfigured while still active")
    same_tile = cl.topo.tile_of_core(cfg.peer_core) == cl.topo.tile_of_core(core.cid)
    iq.capacity = cl.cfg.qlr_depth_intra if same_tile else cl.cfg.qlr_depth_inter
    iq.cfg = cfg
    iq.popped = 0
