"""ProgramSet: per-core micro-op streams plus the L1 image they run on."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..memfabric import Topology


class ConfigError(ValueError):
    """Unsupported kernel size or layout."""


@dataclass(frozen=True)
class OutputRegion:
    name: str
    addr: int
    n_words: int


@dataclass
class ProgramSet:
    name: str
    streams: list  # list[list[MicroOp]], one per core
    image: dict = field(default_factory=dict)  # byte address -> uint32 array
    outputs: list = field(default_factory=list)  # list[OutputRegion]
    expected_flops: int = 0
    expected_int_ops: int = 0
    init_regs: dict = field(default_factory=dict)  # core -> {reg: value}
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.streams = [tuple(s) for s in self.streams]
        spans = sorted((o.addr, o.addr + 4 * o.n_words, o.name) for o in self.outputs)
        for (a0, a1, n0), (b0, b1, n1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ConfigError(f"output regions {n0} and {n1} overlap")

    @property
    def n_ops(self) -> int:
        return sum(len(s) for s in self.streams)

    def count(self, predicate) -> int:
        return sum(1 for s in self.streams for op in s if predicate(op))

    def listing(self, cores=None) -> str:
        """Human-readable dump of the selected cores' streams."""
        lines = [f"; program {self.name}"]
        for c in (range(len(self.streams)) if cores is None else cores):
            lines.append(f"core {c}:")
            lines.extend(f"  {i:5d}  {op.listing()}" for i, op in enumerate(self.streams[c]))
        return "\n".join(lines)

    def read_output(self, memory: np.ndarray, name: str) -> np.ndarray:
        for o in self.outputs:
            if o.name == name:
                return memory[o.addr // 4: o.addr // 4 + o.n_words].copy()
        raise KeyError(name)


class L1Allocator:
    """Bump allocator over the L1 address space (word granularity)."""

    def __init__(self, topo: Topology = Topology(), base: int = 0):
        self.topo = topo
        self.next = base
        self.image: dict[int, np.ndarray] = {}

    def alloc(self, n_words: int, data=None, align_words: int = 1) -> int:
        a = align_words * 4
        addr = (self.next + a - 1) // a * a
        end = addr + 4 * n_words
        if end > self.topo.l1_bytes:
            raise ConfigError(f"kernel data does not fit in L1 ({end} > {self.topo.l1_bytes} bytes)")
        self.next = end
        if data is not None:
            arr = np.asarray(data, dtype=np.uint32).ravel()
            if arr.size != n_words:
                raise ConfigError("initial data size does not match allocation")
            self.image[addr] = arr
        return addr


def empty_streams(topo: Topology = Topology()) -> list:
    return [[] for _ in range(topo.n_cores)]
