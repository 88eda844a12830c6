import numpy as np
import pytest

from heartsim.cluster import ClusterConfig, simulate
from heartsim.core import li, load
from heartsim.kernels.program import ProgramSet
from heartsim.memfabric import (BankAddress, LatencyTable, MemoryFault, MemRequest, Topology, access_latency,
                                arbitrate, map_address)

TOPO = Topology()


def test_topology_totals():
    assert TOPO.n_cores == 64
    assert TOPO.n_banks == 256
    assert TOPO.l1_bytes == 256 * 1024
    with pytest.raises(ValueError):
        Topology(n_groups=3)


@pytest.mark.parametrize("addr, want, gbank", [
    (0x0000, BankAddress(0, 0, 0, 0), 0),
    (0x0004, BankAddress(0, 0, 1, 0), 1),
    (0x0400, BankAddress(0, 0, 0, 4), 0),
    (4 * 16, BankAddress(0, 1, 0, 0), 16),
    (4 * 64, BankAddress(1, 0, 0, 0), 64),
    (4 * 255, BankAddress(3, 3, 15, 0), 255),
])
def test_map_address_examples(addr, want, gbank):
    b = map_address(addr)
    assert b == want
    assert b.global_bank(TOPO) == gbank


def test_map_address_faults():
    with pytest.raises(MemoryFault):
        map_address(2)
    with pytest.raises(MemoryFault):
        map_address(TOPO.l1_bytes)
    with pytest.raises(MemoryFault):
        map_address(-4)


def test_unit_stride_is_conflict_free():
    for start in (0, 4, 4 * 200, 4 * 1000):
        banks = {map_address(start + 4 * i).global_bank(TOPO) for i in range(64)}
        assert len(banks) == 64


def test_access_latency_examples():
    assert access_latency(0, map_address(0)) == 1
    assert access_latency(0, BankAddress(3, 0, 0, 0)) == 5
    assert access_latency(0, BankAddress(0, 1, 0, 0)) == 3
    # core 17 is in group 1, tile 0 of that group
    assert access_latency(17, BankAddress(1, 0, 5, 0)) == 1
    assert access_latency(17, BankAddress(1, 2, 5, 0)) == 3


def test_latency_table_validation():
    with pytest.raises(ValueError):
        LatencyTable(3, 2, 5)
    with pytest.raises(ValueError):
        LatencyTable(1, 3, 6)


def _req(core, word):
    return MemRequest(core=core, is_load=True, word=word)


def test_arbitrate_distinct_banks_all_granted():
    pending = {b: [_req(b % 64, b)] for b in range(64)}
    assert len(arbitrate(pending, {}, 64)) == 64
    assert pending == {}


def test_arbitrate_single_bank_round_robin():
    pending = {0: [_req(c, 0) for c in range(64)]}
    rr: dict = {}
    order = []
    cycles = 0
    while pending:
        g = arbitrate(pending, rr, 64)
        assert len(g) == 1
        order.append(g[0].core)
        cycles += 1
    assert cycles == 64
    assert order == list(range(64))


def test_arbitrate_rotates_priority():
    rr: dict = {}
    first = arbitrate({0: [_req(3, 0), _req(9, 0)]}, rr, 64)[0].core
    second = arbitrate({0: [_req(3, 0), _req(9, 0)]}, rr, 64)[0].core
    assert (first, second) == (3, 9)


def test_arbitrate_empty():
    assert arbitrate({}, {}, 64) == []


def _streaming_program(n_per_core=64):
    streams = []
    for c in range(64):
        ops = [li(0, 0)]
        ops += [load(1 + k % 8, 0, 4 * (c + 64 * k)) for k in range(n_per_core)]
        streams.append(ops)
    return ProgramSet("stream", streams, image={0: np.arange(64 * n_per_core, dtype=np.uint32)})


def test_conflict_free_streaming_sustains_64_grants_per_cycle():
    run = simulate(_streaming_program())
    span = run.last_grant - run.first_grant + 1
    assert run.grants == 64 * 64
    assert run.grants / span == 64
    bandwidth = run.grants / span * TOPO.word_bytes * 0.8e9
    assert bandwidth == 204.8e9


def test_hot_bank_serializes():
    streams = [[li(0, 0), load(1, 0, 0), load(2, 0, 0)] for _ in range(64)]
    run = simulate(ProgramSet("hot", streams))
    assert run.last_grant - run.first_grant + 1 == 128
    assert run.stalls()["mem_retry"] > 0


def test_request_conservation():
    prog = _streaming_program(16)
    run = simulate(prog)
    assert run.requests == run.grants == run.load_grants == 64 * 16


def test_run_is_deterministic():
    prog = _streaming_program(8)
    a = simulate(prog, trace=True)
    b = simulate(prog, trace=True)
    assert a.event_digest == b.event_digest and a.cycles == b.cycles


def test_far_bank_load_takes_five_cycles():
    streams = [[] for _ in range(64)]
    near = [li(0, 0), load(1, 0, 0)]
    far = [li(0, 0), load(1, 0, 4 * 192)]
    streams[0] = near
    t_near = simulate(ProgramSet("near", streams)).cycles
    streams[0] = far
    t_far = simulate(ProgramSet("far", streams)).cycles
    assert t_far - t_near == 4
    flat = ClusterConfig(latency=LatencyTable(1, 1, 1))
    assert simulate(ProgramSet("far", streams), flat).cycles == t_near
