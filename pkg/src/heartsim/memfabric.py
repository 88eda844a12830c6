"""Shared-L1 memory fabric: word-interleaved banks, hierarchical latency and
per-bank round-robin arbitration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MemoryFault(Exception):
    """Unaligned or out-of-range L1 access."""


@dataclass(frozen=True)
class Topology:
    n_groups: int = 4
    tiles_per_group: int = 4
    cores_per_tile: int = 4
    banks_per_tile: int = 16
    bank_bytes: int = 1024
    word_bytes: int = 4

    def __post_init__(self):
        for name in ("n_groups", "tiles_per_group", "cores_per_tile", "banks_per_tile", "bank_bytes", "word_bytes"):
            v = getattr(self, name)
            if v <= 0 or v & (v - 1):
                raise ValueError(f"topology field {name}={v} must be a power of two")

    @property
    def n_tiles(self) -> int:
        return self.n_groups * self.tiles_per_group

    @property
    def n_cores(self) -> int:
        return self.n_tiles * self.cores_per_tile

    @property
    def n_banks(self) -> int:
        return self.n_tiles * self.banks_per_tile

    @property
    def l1_bytes(self) -> int:
        return self.n_banks * self.bank_bytes

    @property
    def l1_words(self) -> int:
        return self.l1_bytes // self.word_bytes

    def tile_of_core(self, core: int) -> int:
        return core // self.cores_per_tile

    def group_of_core(self, core: int) -> int:
        return core // (self.cores_per_tile * self.tiles_per_group)


@dataclass(frozen=True)
class LatencyTable:
    intra_tile: int = 1
    intra_group: int = 3
    inter_group: int = 5

    def __post_init__(self):
        if not (1 <= self.intra_tile <= self.intra_group <= self.inter_group <= 5):
            raise ValueError(f"latency table must satisfy 1 <= tile <= group <= cluster <= 5, got {self}")


@dataclass(frozen=True)
class BankAddress:
    group: int
    tile: int
    bank: int  # index within the tile
    offset: int  # byte offset within the bank

    def global_bank(self, topo: Topology) -> int:
        return (self.group * topo.tiles_per_group + self.tile) * topo.banks_per_tile + self.bank


def map_address(addr: int, topo: Topology = Topology()) -> BankAddress:
    """Map a byte address to its bank under full word interleaving."""
    if addr % topo.word_bytes:
        raise MemoryFault(f"unaligned address {addr:#x}")
    if not 0 <= addr < topo.l1_bytes:
        raise MemoryFault(f"address {addr:#x} outside L1 ({topo.l1_bytes} bytes)")
    word = addr // topo.word_bytes
    gbank = word % topo.n_banks
    offset = (word // topo.n_banks) * topo.word_bytes
    tile_global, bank = divmod(gbank, topo.banks_per_tile)
    group, tile = divmod(tile_global, topo.tiles_per_group)
    return BankAddress(group, tile, bank, offset)


def access_latency(core: int, bank: BankAddress, table: LatencyTable = LatencyTable(),
                   topo: Topology = Topology()) -> int:
    tile = topo.tile_of_core(core)
    group = topo.group_of_core(core)
    if bank.group != group:
        return table.inter_group
    if bank.tile != tile % topo.tiles_per_group:
        return table.intra_group
    return table.intra_tile


def core_to_core_latency(src: int, dst: int, table: LatencyTable, topo: Topology) -> int:
    """Latency between two cores' tiles, reusing the memory latency table."""
    if topo.tile_of_core(src) == topo.tile_of_core(dst):
        return table.intra_tile
    if topo.group_of_core(src) == topo.group_of_core(dst):
        return table.intra_group
    return table.inter_group


class LatencyMap:
    """Precomputed core x bank and core x core latency lookups."""

    def __init__(self, topo: Topology, table: LatencyTable):
        self.topo = topo
        self.table = table
        n_banks = topo.n_banks
        banks_per_group = n_banks // topo.n_groups
        self.core_bank: list[list[int]] = []
        for c in range(topo.n_cores):
            t, g = topo.tile_of_core(c), topo.group_of_core(c)
            row = []
            for b in range(n_banks):
                bt, bg = b // topo.banks_per_tile, b // banks_per_group
                if bg != g:
                    row.append(table.inter_group)
                elif bt != t:
                    row.append(table.intra_group)
                else:
                    row.append(table.intra_tile)
            self.core_bank.append(row)
        self.core_core = [[core_to_core_latency(a, b, table, topo) for b in range(topo.n_cores)]
                          for a in range(topo.n_cores)]


@dataclass(slots=True)
class MemRequest:
    core: int
    is_load: bool
    word: int  # word index into L1
    dest_reg: int = -1
    data: object = 0  # store word, or routing info of a load bound for a QLR
    issue_cycle: int = 0
    wide_part: int = 0  # 0: plain access, 1/2: lanes of a two-word access


def arbitrate(pending: dict[int, list[MemRequest]], rr_pointer: dict[int, int], n_cores: int) -> list[MemRequest]:
    """Grant at most one request per bank, round-robin over requesting cores.

    ``rr_pointer[bank]`` is the core with top priority next time; it moves
    past the granted core. Granted requests are removed from ``pending``.
    """
    granted = []
    for bank in sorted(pending):
        queue = pending[bank]
        if not queue:
            continue
        start = rr_pointer.get(bank, 0)
        best = min(range(len(queue)), key=lambda i: (queue[i].core - start) % n_cores)
        req = queue.pop(best)
        rr_pointer[bank] = (req.core + 1) % n_cores
        granted.append(req)
    for bank in [b for b, q in pending.items() if not q]:
        del pending[bank]
    return granted


class L1Memory:
    """Word-addressed backing store for the 256 banks."""

    def __init__(self, topo: Topology):
        self.topo = topo
        # A plain list: the engine does scalar word accesses every cycle.
        self.words: list[int] = [0] * topo.l1_words

    def word_index(self, addr: int) -> int:
        if addr & 3:
            raise MemoryFault(f"unaligned address {addr:#x}")
        w = addr >> 2
        if not 0 <= w < self.topo.l1_words:
            raise MemoryFault(f"address {addr:#x} outside L1")
        return w

    def load_image(self, image: dict[int, np.ndarray]) -> None:
        for base, data in image.items():
            w = self.word_index(base)
            data = np.asarray(data, dtype=np.uint32)
            if w + data.size > len(self.words):
                raise MemoryFault(f"image at {base:#x} overruns L1")
            self.words[w:w + data.size] = data.tolist()

    def read_words(self, addr: int, n: int) -> np.ndarray:
        w = self.word_index(addr)
        if w + n > len(self.words):
            raise MemoryFault(f"read of {n} words at {addr:#x} overruns L1")
        return np.array(self.words[w:w + n], dtype=np.uint32)

    def snapshot(self) -> np.ndarray:
        return np.array(self.words, dtype=np.uint32)
