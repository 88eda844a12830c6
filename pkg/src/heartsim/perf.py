"""Performance counters and derived metrics.

Cycles never depend on the operating corner; only wall-clock quantities
(GFLOP/s, Gbps, latency) are scaled by the corner frequency. The corner
voltage is carried as an annotation only, there is no power model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import STALL_CATEGORIES
from .memfabric import Topology

FLOPS_PER_CMAC = 8


@dataclass(frozen=True)
class Corner:
    label: str
    frequency_hz: float
    voltage_v: float

    def __post_init__(self):
        if self.frequency_hz <= 0:
            raise ValueError("corner frequency must be positive")


CORNERS = {
    "800MHz": Corner("800MHz@0.8V", 800e6, 0.8),
    "645MHz": Corner("645MHz@0.65V", 645e6, 0.65),
}


def get_corner(name: str) -> Corner:
    try:
        return CORNERS[name]
    except KeyError:
        raise ValueError(f"unknown corner {name!r}; choose from {sorted(CORNERS)}") from None


def peak_gflops(corner: Corner = CORNERS["800MHz"], topo: Topology = Topology()) -> float:
    """Every core retiring one CMAC (8 FLOP) per cycle."""
    return topo.n_cores * FLOPS_PER_CMAC * corner.frequency_hz / 1e9


@dataclass
class KernelPerf:
    """Counters of one kernel (possibly summed over several launches)."""

    name: str
    cycles: int = 0
    runs: int = 0
    n_cores: int = 64
    issued: int = 0
    issued_by_kind: dict = field(default_factory=dict)
    stalls: dict = field(default_factory=lambda: {c: 0 for c in STALL_CATEGORIES})
    idle: int = 0
    flops: int = 0
    int_ops: int = 0
    grants: int = 0

    @classmethod
    def from_run(cls, name: str, run, repeat: int = 1) -> "KernelPerf":
        """Counters of ``repeat`` back-to-back launches of an identical program.

        Timing is data-independent, so the counters of one launch scale
        exactly."""
        kinds: dict = {}
        for k, v in run.issued_by_kind().items():
            kinds[k] = v * repeat
        return cls(
            name=name,
            cycles=run.cycles * repeat,
            runs=repeat,
            n_cores=run.n_cores,
            issued=run.issued() * repeat,
            issued_by_kind=kinds,
            stalls={k: v * repeat for k, v in run.stalls().items()},
            idle=sum(c.idle for c in run.counters) * repeat,
            flops=run.flops() * repeat,
            int_ops=run.int_ops() * repeat,
            grants=run.grants * repeat,
        )

    def __add__(self, other: "KernelPerf") -> "KernelPerf":
        kinds = dict(self.issued_by_kind)
        for k, v in other.issued_by_kind.items():
            kinds[k] = kinds.get(k, 0) + v
        return KernelPerf(
            name=self.name,
            cycles=self.cycles + other.cycles,
            runs=self.runs + other.runs,
            n_cores=self.n_cores,
            issued=self.issued + other.issued,
            issued_by_kind=kinds,
            stalls={k: self.stalls[k] + other.stalls[k] for k in self.stalls},
            idle=self.idle + other.idle,
            flops=self.flops + other.flops,
            int_ops=self.int_ops + other.int_ops,
            grants=self.grants + other.grants,
        )

    @property
    def ipc(self) -> float:
        return derive_ipc(self.issued, self.cycles, self.n_cores)

    def fractions(self) -> dict:
        """Share of all core-cycles spent issuing, in each stall category and idle."""
        total = self.n_cores * self.cycles
        if not total:
            return {}
        out = {"issue": self.issued / total}
        out.update({k: v / total for k, v in self.stalls.items()})
        out["idle"] = self.idle / total
        return out


def derive_ipc(issued: int, cycles: int, n_cores: int = 64) -> float:
    if cycles <= 0:
        return 0.0
    return issued / (n_cores * cycles)


def derive_gflops(flops: int, cycles: int, corner: Corner = CORNERS["800MHz"], topo: Topology = Topology()) -> float:
    if cycles <= 0:
        return 0.0
    g = flops * corner.frequency_hz / cycles / 1e9
    if g > peak_gflops(corner, topo) * (1 + 1e-12):
        raise ValueError(f"{g:.1f} GFLOP/s exceeds the cluster peak; FLOP accounting is broken")
    return g


def derive_gops(int_ops: int, cycles: int, corner: Corner = CORNERS["800MHz"]) -> float:
    if cycles <= 0:
        return 0.0
    return int_ops * corner.frequency_hz / cycles / 1e9


def pusch_bits(n_rx: int, n_sc: int, n_symbols: int = 14, bits_per_sample: int = 32) -> int:
    """I/Q antenna samples of one TTI (16-bit I plus 16-bit Q per sample)."""
    return n_rx * n_sc * n_symbols * bits_per_sample


def derive_pusch_gbps(n_rx: int, n_sc: int, cycles: int, corner: Corner = CORNERS["800MHz"],
                      n_symbols: int = 14) -> float:
    seconds = cycles / corner.frequency_hz
    return pusch_bits(n_rx, n_sc, n_symbols) / seconds / 1e9


@dataclass(frozen=True)
class BudgetCheck:
    latency_ms: float
    budget_ms: float
    passed: bool
    margin_ms: float


def check_latency_budget(cycles: int, corner: Corner, budget_ms: float = 4.0) -> BudgetCheck:
    lat = cycles / corner.frequency_hz * 1e3
    return BudgetCheck(lat, budget_ms, lat < budget_ms, budget_ms - lat)
