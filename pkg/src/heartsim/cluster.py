"""Cycle engine for the 64-core cluster.

Each cycle:

1. matured load responses and div/sqrt results are written back,
2. every live core tries to issue one micro-op (in core-index order),
3. bank queues are arbitrated (one grant per bank, round-robin).

A load granted at cycle ``g`` from a bank at latency ``L`` is usable from
cycle ``g + L``. Stores update memory at grant time and are posted.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import softnum as sn
from .core import CoreState, DeadlockError, DivSqrtUnit, SimulatorFault, STALL_CATEGORIES, core_step
from .memfabric import L1Memory, LatencyMap, LatencyTable, MemoryFault, MemRequest, Topology


@dataclass(frozen=True)
class ClusterConfig:
    topo: Topology = field(default_factory=Topology)
    latency: LatencyTable = field(default_factory=LatencyTable)
    qlr_registers: tuple = tuple(range(20, 32))
    qlr_depth_intra: int = 4
    qlr_depth_inter: int = 4
    scoreboard_depth: int = 8
    fdiv_latency: int = 11
    fsqrt_latency: int = 15
    barrier_overhead: int = 10
    deadlock_window: int = 10_000

    def __post_init__(self):
        if self.qlr_depth_intra < 1 or self.qlr_depth_inter < 1:
            raise ValueError("QLR queue depths must be >= 1")
        if self.scoreboard_depth < 1:
            raise ValueError("scoreboard depth must be >= 1")
        if self.fdiv_latency < 1 or self.fsqrt_latency < 1:
            raise ValueError("div/sqrt latencies must be >= 1")


@dataclass
class RunResult:
    cycles: int
    counters: list  # CoreCounters per core
    grants: int
    load_grants: int
    store_grants: int
    first_grant: int
    last_grant: int
    requests: int
    qlr_pushes: int
    memory: np.ndarray
    event_digest: str

    @property
    def n_cores(self) -> int:
        return len(self.counters)

    def issued(self) -> int:
        return sum(c.n_issued for c in self.counters)

    def issued_by_kind(self) -> dict:
        out: dict = {}
        for c in self.counters:
            for k, v in c.issued.items():
                out[k] = out.get(k, 0) + v
        return dict(sorted(out.items()))

    def stalls(self) -> dict:
        return {cat: sum(c.stalls[cat] for c in self.counters) for cat in STALL_CATEGORIES}

    def tags(self) -> dict:
        out: dict = {}
        for c in self.counters:
            for k, v in c.tags.items():
                out[k] = out.get(k, 0) + v
        return dict(sorted(out.items()))

    def flops(self) -> int:
        return sum(c.flops for c in self.counters)

    def int_ops(self) -> int:
        return sum(c.int_ops for c in self.counters)

    def ipc(self) -> float:
        return self.issued() / (self.n_cores * self.cycles) if self.cycles else 0.0

    def read(self, addr: int, n: int) -> np.ndarray:
        return self.memory[addr // 4: addr // 4 + n].copy()


class Cluster:
    """One simulation instance. Not thread-safe; create one per run."""

    def __init__(self, program, cfg: ClusterConfig | None = None, trace: bool = False):
        self.cfg = cfg or ClusterConfig()
        topo = self.topo = self.cfg.topo
        if len(program.streams) != topo.n_cores:
            raise ValueError(f"program has {len(program.streams)} streams for {topo.n_cores} cores")
        self.program = program
        self.lat = LatencyMap(topo, self.cfg.latency)
        self.memory = L1Memory(topo)
        self.memory.load_image(program.image)
        self.mem = self.memory.words
        init = program.init_regs or {}
        self.cores = [CoreState(i, list(s), init.get(i)) for i, s in enumerate(program.streams)]
        cpt = topo.cores_per_tile
        self.divsqrt = [DivSqrtUnit(list(range(t * cpt, (t + 1) * cpt))) for t in range(topo.n_tiles)]
        self.bank_q: dict[int, list] = {}
        self.rr: list[int] = [0] * topo.n_banks
        self.pending_events: dict[int, list] = {}  # cycle -> [(core, reg, value, wide_part)]
        self.cycle = 0
        self.progress = 0
        self.grants = self.load_grants = self.store_grants = 0
        self.first_grant = -1
        self.last_grant = -1
        self.requests = 0
        self.qlr_pushes = 0
        self._trace = hashlib.sha256() if trace else None
        self._barrier_parts = self._barrier_participants()
        self._barrier_arrivals: dict[tuple, list] = {}

    # -- setup helpers ---------------------------------------------------------
    def _barrier_participants(self) -> dict[int, int]:
        per_core = []
        for s in self.program.streams:
            cnt: dict = {}
            for op in s:
                if op.op == "barrier":
                    cnt[op.imm] = cnt.get(op.imm, 0) + 1
            per_core.append(cnt)
        parts: dict[int, int] = {}
        occ: dict[int, int] = {}
        for cnt in per_core:
            for bid, n in cnt.items():
                parts[bid] = parts.get(bid, 0) + 1
                if occ.setdefault(bid, n) != n:
                    raise SimulatorFault(f"barrier {bid} is reached a different number of times by different cores")
        return parts

    # -- services used by core_step ----------------------------------------------
    def _word(self, addr: int) -> int:
        try:
            return self.memory.word_index(addr)
        except MemoryFault as e:
            raise SimulatorFault(str(e)) from e

    def _enqueue(self, req: MemRequest) -> None:
        bank = req.word & (self.topo.n_banks - 1)
        q = self.bank_q.get(bank)
        if q is None:
            self.bank_q[bank] = [req]
        else:
            q.append(req)
        self.requests += 1

    def issue_load(self, core: CoreState, op, addr: int, now: int, slot=None, consumer: int = -1) -> None:
        w = self._word(addr)
        if slot is not None:
            core.outstanding += 1
            core.port_busy += 1
            extra = 0 if consumer == core.cid else self.lat.core_core[core.cid][consumer]
            self._enqueue(MemRequest(core.cid, True, w, -1, (slot, extra), now, 0))
            return
        dst = op.dst
        core.pending[dst] = True
        core.outstanding += 1
        if op.wide:
            w2 = self._word(addr + 4)
            core.port_busy += 2
            core.wide_buf[dst] = [None, None]
            self._enqueue(MemRequest(core.cid, True, w, dst, 0, now, 1))
            self._enqueue(MemRequest(core.cid, True, w2, dst, 0, now, 2))
        else:
            core.port_busy += 1
            self._enqueue(MemRequest(core.cid, True, w, dst, 0, now, 0))

    def issue_store(self, core: CoreState, op, addr: int, value, now: int) -> None:
        w = self._word(addr)
        if op.wide:
            if not isinstance(value, tuple):
                raise SimulatorFault(f"core {core.cid}: wide store of a non-C32 value")
            w2 = self._word(addr + 4)
            core.port_busy += 2
            self._enqueue(MemRequest(core.cid, False, w, -1, sn.f32_bits(value[0]), now, 1))
            self._enqueue(MemRequest(core.cid, False, w2, -1, sn.f32_bits(value[1]), now, 2))
            return
        if isinstance(value, tuple):
            raise SimulatorFault(f"core {core.cid}: narrow store of a C32 register")
        core.port_busy += 1
        self._enqueue(MemRequest(core.cid, False, w, -1, _word_of(value), now, 0))

    def schedule_writeback(self, cycle: int, core: int, reg: int, value) -> None:
        self.pending_events.setdefault(cycle, []).append((core, reg, value, -1))

    def barrier_arrive(self, core: CoreState, bid: int, now: int) -> None:
        occ = core.barrier_seen.get(bid, 0)
        core.barrier_seen[bid] = occ + 1
        key = (bid, occ)
        arrived = self._barrier_arrivals.setdefault(key, [])
        arrived.append(core)
        core.barrier_key = key
        core.barrier_release = -1
        if len(arrived) == self._barrier_parts[bid]:
            release = now + self.cfg.barrier_overhead
            for c in arrived:
                c.barrier_release = release
            del self._barrier_arrivals[key]

    # -- engine --------------------------------------------------------------------
    def _deliver(self, now: int) -> None:
        events = self.pending_events.pop(now, None)
        if not events:
            return
        cores = self.cores
        for cid, reg, value, part in events:
            core = cores[cid]
            if reg < 0:
                # load response routed into a QLR: fill the reserved slot
                slot, extra = part
                slot[0] = now + extra
                slot[1] = value
                core.outstanding -= 1
                continue
            if part == 0 or part == -1:
                core.regs[reg] = value
                core.pending[reg] = False
                if part == 0:
                    core.outstanding -= 1
                continue
            buf = core.wide_buf[reg]
            buf[part - 1] = value
            if buf[0] is not None and buf[1] is not None:
                core.regs[reg] = (sn.f32_from_bits(buf[0]), sn.f32_from_bits(buf[1]))
                core.pending[reg] = False
                core.outstanding -= 1
                del core.wide_buf[reg]

    def _arbitrate(self, now: int) -> None:
        n = self.topo.n_cores
        rr = self.rr
        mem = self.mem
        lat = self.lat.core_bank
        cores = self.cores
        events = self.pending_events
        trace = self._trace
        empty = []
        for bank, q in self.bank_q.items():
            if len(q) == 1:
                req = q.pop()
            else:
                start = rr[bank]
                best = 0
                best_key = (q[0].core - start) % n
                for i in range(1, len(q)):
                    k = (q[i].core - start) % n
                    if k < best_key:
                        best, best_key = i, k
                req = q.pop(best)
            if not q:
                empty.append(bank)
            rr[bank] = (req.core + 1) % n
            cores[req.core].port_busy -= 1
            if req.is_load:
                due = now + lat[req.core][bank]
                ev = events.get(due)
                item = (req.core, req.dest_reg, mem[req.word], req.wide_part if req.dest_reg >= 0 else req.data)
                if ev is None:
                    events[due] = [item]
                else:
                    ev.append(item)
                self.load_grants += 1
            else:
                mem[req.word] = req.data
                self.store_grants += 1
            if trace is not None:
                trace.update(b"%d:%d:%d;" % (now, req.core, req.word))
        for b in empty:
            del self.bank_q[b]
        k = len(self.bank_q) + len(empty)  # banks that granted this cycle
        if k:
            self.grants += k
            if self.first_grant < 0:
                self.first_grant = now
            self.last_grant = now

    def run(self, max_cycles: int | None = None) -> RunResult:
        cores = self.cores
        live = [c for c in cores if not c.halted]
        window = self.cfg.deadlock_window
        now = self.cycle
        trace = self._trace
        while True:
            if self.pending_events:
                self._deliver(now)
            if not live and not self.bank_q and not self.pending_events:
                break
            if max_cycles is not None and now >= max_cycles:
                raise SimulatorFault(f"cycle limit {max_cycles} reached")
            finished = False
            for c in live:
                core_step(self, c, now)
                if c.pc >= len(c.ops) and c.barrier_key is None:
                    finished = True
            if trace is not None:
                trace.update(bytes(c.pc & 0xFF for c in live))
            if finished:
                live = [c for c in live if not c.halted]
            if self.bank_q:
                self._arbitrate(now)
            if live and now - self.progress > window:
                raise DeadlockError(self._deadlock_report(now))
            now += 1
            self.cycle = now
        self._check_drained()
        for c in cores:
            ctr = c.ctr
            ctr.idle = now - ctr.n_issued - sum(ctr.stalls.values())
        return RunResult(
            cycles=now,
            counters=[c.ctr for c in cores],
            grants=self.grants,
            load_grants=self.load_grants,
            store_grants=self.store_grants,
            first_grant=self.first_grant,
            last_grant=self.last_grant,
            requests=self.requests,
            qlr_pushes=self.qlr_pushes,
            memory=self.memory.snapshot(),
            event_digest=trace.hexdigest() if trace is not None else "",
        )

    def _check_drained(self) -> None:
        for c in self.cores:
            for r, iq in c.qin.items():
                if iq.q:
                    raise SimulatorFault(f"core {c.cid}: {len(iq.q)} unconsumed values left in QLR r{r}")
            if c.qout:
                raise SimulatorFault(f"core {c.cid}: output QLRs {sorted(c.qout)} did not complete their transfers")

    def _deadlock_report(self, now: int) -> str:
        lines = [f"no core issued for {now - self.progress} cycles (cycle {now}):"]
        for c in self.cores:
            if c.halted:
                continue
            op = c.ops[c.pc].listing() if c.pc < len(c.ops) else "(barrier wait)"
            lines.append(f"  core {c.cid:2d} pc {c.pc:5d} {c.stall_reason:13s} {op}")
        return "\n".join(lines)


def _word_of(value) -> int:
    """32-bit memory image of a scalar register value."""
    if isinstance(value, float):
        return sn.f32_bits(value)
    return value & 0xFFFFFFFF


def simulate(program, cfg: ClusterConfig | None = None, trace: bool = False, max_cycles: int | None = None) -> RunResult:
    return Cluster(program, cfg, trace).run(max_cycles)
