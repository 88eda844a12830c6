"""Acceptance checks for the whole simulator, one test per criterion.

Each test records a single PASS/FAIL line. The lines are printed as the tests
run (visible with ``-s``) and again in the pytest terminal summary. Running
this file directly (``python3 tests/test_acceptance.py``) executes all eight
criteria and prints only those lines.
"""

from __future__ import annotations

import functools
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

from heartsim import cli  # noqa: E402
from heartsim import softnum as sn  # noqa: E402
from heartsim.baseband import SCENARIOS, SimOptions, mmse_equalize, ofdm_demod, pusch_pipeline  # noqa: E402
from heartsim.cluster import ClusterConfig, simulate  # noqa: E402
from heartsim.core import compute, li, load  # noqa: E402
from heartsim.kernels import cfft, dl, matmul, mmse  # noqa: E402
from heartsim.kernels.program import ProgramSet  # noqa: E402
from heartsim.kernels.registry import KERNELS, outputs_match  # noqa: E402
from heartsim.linksim import LinkConfig, ber_sweep, curves_agree, snr_at_ber, synthesize_tti, trials_for_bits  # noqa: E402
from heartsim.memfabric import LatencyTable, Topology  # noqa: E402
from heartsim.perf import CORNERS, check_latency_budget, derive_gflops  # noqa: E402
from oracles import conv2d_naive, dft, f16_decode, matmul_naive, mmse_naive, rel_rms, wrap_int32  # noqa: E402

RESULTS: list = []
FLAT = ClusterConfig(latency=LatencyTable(1, 1, 1))
WORKERS = max(1, min(8, os.cpu_count() or 1))


def record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    assert ok, line


@functools.lru_cache(maxsize=None)
def kernel_runs(name: str, variant: str):
    """Default-size kernel simulated under the default and the flat latency table."""
    spec = KERNELS[name]
    prog, ref = spec.build(variant, 0)
    return prog, ref, simulate(prog), simulate(prog, FLAT)


@functools.lru_cache(maxsize=None)
def beamforming_runs(variant: str):
    prog, ref = matmul.build_cmatmul(8, 32, 1024, variant, seed=0)
    return prog, ref, simulate(prog)


@functools.lru_cache(maxsize=None)
def pusch_run(scenario: str):
    cfg = SCENARIOS[scenario]
    tti = synthesize_tti(cfg, seed=0)
    return pusch_pipeline(tti.rx_time, cfg, tti.bf, tti.pilots, "simulated", SimOptions())


# ---------------------------------------------------------------------------
def test_criterion_1_peak_identities():
    one = sn.c16_from_complex(1 + 0j)
    n_ops = 1000
    streams = [[compute("CMAC", 3, 3, 1, 2)] * n_ops for _ in range(64)]
    regs = {c: {1: one, 2: one, 3: sn.C32_ZERO} for c in range(64)}
    run = simulate(ProgramSet("peak", streams, init_regs=regs))
    gflops = derive_gflops(run.flops(), run.cycles, CORNERS["800MHz"])

    topo = Topology()
    n_per_core = 64
    streams = [[li(0, 0)] + [load(1 + k % 8, 0, 4 * (c + 64 * k)) for k in range(n_per_core)] for c in range(64)]
    srun = simulate(ProgramSet("stream", streams))
    span = srun.last_grant - srun.first_grant + 1
    gbps = srun.grants / span * topo.word_bytes * CORNERS["800MHz"].frequency_hz / 1e9
    record(1, gflops == 409.6 and gbps == 204.8,
           f"peak {gflops} GFLOP/s (want 409.6), streaming {gbps} GB/s (want 204.8)")


def test_criterion_2_ber_fidelity():
    cfg = LinkConfig(16, 16, "rayleigh", "perfect")
    n_trials = trials_for_bits(cfg, 10 ** 6)
    snrs = [10.0 + 3.0 * i for i in range(13)]  # 10 .. 46 dB
    mixed = ber_sweep(cfg, snrs, n_trials, "mixed", seed=1, workers=WORKERS)
    golden = ber_sweep(cfg, snrs, n_trials, "golden", seed=1, workers=WORKERS)
    overlap = all(curves_agree(m, g) for m, g in zip(mixed, golden))
    worst = max(abs(m.ber - g.ber) / max(math.hypot(m.ci, g.ci), 1e-300) for m, g in zip(mixed, golden))
    s_mixed = snr_at_ber(mixed, 1e-3)
    s_golden = snr_at_ber(golden, 1e-3)
    near = s_mixed is not None and abs(s_mixed - 16.5) <= 2.0
    ber_16 = [p.ber for p in ber_sweep(cfg, [16.5], n_trials, "mixed", seed=2, workers=WORKERS)][0]
    record(2, overlap and near,
           f"{mixed[0].bits} bits/point; curves overlap={overlap} (worst {worst:.2f} of 3 half-widths); "
           f"SNR@1e-3 mixed={s_mixed and round(s_mixed, 2)} dB golden={s_golden and round(s_golden, 2)} dB "
           f"(want 16.5 +- 2); BER at 16.5 dB = {ber_16:.3g}")


def test_criterion_3_systolic_savings():
    lines = []
    ok = True
    for name in ("matmul", "cfft"):
        _, _, base, _ = kernel_runs(name, "baseline")
        _, _, syst, _ = kernel_runs(name, "systolic")
        fewer = syst.issued() < base.issued()
        higher = syst.ipc() > base.ipc()
        ok &= fewer and higher
        lines.append(f"{name} ops {syst.issued()}<{base.issued()}={fewer} "
                     f"ipc {syst.ipc():.3f}>{base.ipc():.3f}={higher}")
    cfft_red = 1 - kernel_runs("cfft", "systolic")[2].cycles / kernel_runs("cfft", "baseline")[2].cycles
    bf_red = 1 - beamforming_runs("systolic")[2].cycles / beamforming_runs("baseline")[2].cycles
    ok &= cfft_red >= 0.30 and bf_red >= 0.08
    lines.append(f"CFFT reduction {cfft_red:.1%} (>=30%), CMatMul 8x32x1024 reduction {bf_red:.1%} (>=8%)")
    record(3, ok, "; ".join(lines))


def test_criterion_4_ipc_plausibility():
    bad = []
    seen = []
    for name in ("cfft", "cmatmul", "chest", "mmse"):
        for v in KERNELS[name].variants:
            ipc = kernel_runs(name, v)[2].ipc()
            seen.append(f"{name}/{v}={ipc:.3f}")
            if not 0.4 <= ipc <= 1.0:
                bad.append(seen[-1])
    for step, kp in pusch_run("8x8").steps.items():
        seen.append(f"pusch.{step}={kp.ipc:.3f}")
        if not 0.4 <= kp.ipc <= 1.0:
            bad.append(seen[-1])
    for name in ("matmul", "conv2d", "dotp"):
        for v in KERNELS[name].variants:
            ipc = kernel_runs(name, v)[2].ipc()
            seen.append(f"{name}/{v}={ipc:.3f}")
            if not 0.7 <= ipc <= 1.0:
                bad.append(seen[-1] + " (int, want >=0.7)")
    record(4, not bad, ("out of range: " + ", ".join(bad) + "; " if bad else "") + "all: " + ", ".join(seen))


def test_criterion_5_functional_oracles():
    fails = []
    rng = np.random.default_rng(5)

    # FFT: simulated half precision vs O(N^2) DFT, and the float64 path
    x = sn.c16_v((rng.standard_normal((2, 1024)) + 1j * rng.standard_normal((2, 1024))) / math.sqrt(2))
    ref = dft(x)
    for v in ("baseline", "systolic"):
        prog, _ = cfft.build_cfft(1024, v, 2, x=x)
        out = cfft.decode_output(prog, simulate(prog).memory)
        if rel_rms(out, ref) > 2.0 ** -8:
            fails.append(f"cfft/{v} rel rms {rel_rms(out, ref):.2e}")
    g = ofdm_demod(x[:, None, :])[:, 0, :]
    if rel_rms(g, ref) > 1e-12:
        fails.append(f"golden fft rel rms {rel_rms(g, ref):.2e}")

    # integer kernels exact vs naive loops
    a = rng.integers(-2 ** 31, 2 ** 31, (64, 64))
    b = rng.integers(-2 ** 31, 2 ** 31, (64, 64))
    want = [[wrap_int32(v) for v in row] for row in matmul_naive(a.tolist(), b.tolist())]
    for v in ("baseline", "systolic"):
        prog, _ = matmul.build_matmul(64, 64, 64, v, a=a, b=b)
        out = matmul.decode_output(prog, simulate(prog).memory, (64, 64), "int32")
        if out.tolist() != want:
            fails.append(f"matmul/{v} differs from naive")
    img = rng.integers(-2 ** 15, 2 ** 15, (64, 62))
    ker = rng.integers(-2 ** 15, 2 ** 15, (3, 3))
    prog, _ = dl.build_conv2d(64, 62, 3, img=img, ker=ker)
    if dl.decode_conv2d(prog, simulate(prog).memory).tolist() != conv2d_naive(img.tolist(), ker.tolist()):
        fails.append("conv2d differs from naive")
    va = rng.integers(-2 ** 31, 2 ** 31, 16384)
    vb = rng.integers(-2 ** 31, 2 ** 31, 16384)
    prog, _ = dl.build_dotp(16384, a=va, b=vb)
    if dl.decode_dotp(prog, simulate(prog).memory) != wrap_int32(sum(int(p) * int(q) for p, q in zip(va, vb))):
        fails.append("dotp differs from naive")

    # zero-forcing identity in float64: a scaled permutation channel is inverted exactly
    perm = np.eye(8)[rng.permutation(8)] * (2.0 ** rng.integers(-3, 4, 8))[:, None]
    h = np.broadcast_to(perm.astype(complex), (16, 8, 8))
    sym = (rng.integers(-3, 4, (2, 8, 16)) + 1j * rng.integers(-3, 4, (2, 8, 16))).astype(complex)
    y = np.einsum("kbt,stk->sbk", h, sym)
    if not np.array_equal(mmse_equalize(y, h, 0.0).symbols, sym):
        fails.append("zero-forcing identity not exact")

    # simulated Cholesky solve vs float64 textbook solver
    n_sc, n_rhs, s2 = 32, 4, 0.05
    hh = (rng.standard_normal((n_sc, 8, 8)) + 1j * rng.standard_normal((n_sc, 8, 8))) / math.sqrt(2)
    yy = (rng.standard_normal((n_rhs, n_sc, 8)) + 1j * rng.standard_normal((n_rhs, n_sc, 8))) / math.sqrt(2)
    prog, _ = mmse.build_mmse_solver(8, 8, n_sc, n_rhs, h=hh, y=yy, sigma2=s2)
    got = mmse.decode_output(prog, simulate(prog).memory)
    h16, y16 = sn.c16_v(hh), sn.c16_v(yy)
    ref = np.array([[mmse_naive(h16[k], y16[r, k], float(sn.fround32(s2))) for k in range(n_sc)]
                    for r in range(n_rhs)])
    err = np.linalg.norm(got - ref) / np.linalg.norm(ref)
    if err > 2.0 ** -10:
        fails.append(f"cholesky rel err {err:.2e}")

    # softnum: every binary16 pattern, dense add/mul, dense binary32 div/sqrt
    for bits in range(1 << 16):
        v = sn.f16_to_float(bits)
        if math.isnan(v):
            continue
        if sn.f16_round(v) != bits or v != float(f16_decode(bits)):
            fails.append(f"f16 pattern {bits:#06x}")
            break
    halves = np.arange(1 << 16, dtype=np.uint16).view(np.float16)
    partners = rng.integers(0, 1 << 16, 64).astype(np.uint16).view(np.float16)
    with np.errstate(all="ignore"):
        for p in partners:
            for got16, want16 in ((sn.r16_v(sn.r32_v(halves.astype(np.float64) + float(p))), halves + p),
                                  (sn.r16_v(halves.astype(np.float64) * float(p)), halves * p)):
                g16 = got16.astype(np.float16)
                nan = np.isnan(want16)
                if not (np.array_equal(np.isnan(g16), nan)
                        and np.array_equal(g16[~nan].view(np.uint16), want16[~nan].view(np.uint16))):
                    fails.append("f16 add/mul vs IEEE half")
        fa = (rng.standard_normal(10 ** 6) * 10.0 ** rng.integers(-10, 10, 10 ** 6)).astype(np.float32)
        fb = (rng.standard_normal(10 ** 6) * 10.0 ** rng.integers(-10, 10, 10 ** 6)).astype(np.float32)
        if not np.array_equal(sn.fdiv_v(fa.astype(float), fb.astype(float)), (fa / fb).astype(float)):
            fails.append("fdiv vs binary32")
        if not np.array_equal(sn.fsqrt_v(np.abs(fa).astype(float)), np.sqrt(np.abs(fa)).astype(float)):
            fails.append("fsqrt vs binary32")
    record(5, not fails, "failures: " + ", ".join(fails) if fails else
           "FFT, MatMul, Conv2D, DotP, ZF identity, Cholesky and softnum all within tolerance")


def test_criterion_6_timing_independence():
    differs = []
    checked = []
    for name, spec in KERNELS.items():
        for v in spec.variants:
            prog, ref, a, b = kernel_runs(name, v)
            checked.append(f"{name}/{v}")
            if not np.array_equal(a.memory, b.memory) or not outputs_match(spec.decode(prog, a.memory), ref):
                differs.append(f"{name}/{v}")
    record(6, not differs, f"{len(checked)} kernel variants bit-identical under {{1,3,5}} and {{1,1,1}}"
           if not differs else "memory differs: " + ", ".join(differs))


def test_criterion_7_latency_budget():
    corner = CORNERS["645MHz"]
    big = check_latency_budget(pusch_run("8x8").total_cycles, corner)
    small = check_latency_budget(pusch_run("4x4").total_cycles, corner)
    in_band = 1.6 <= big.latency_ms <= 4.8
    print(f"INFO criterion 7: 8x8 latency {big.latency_ms:.3f} ms vs 3.2 ms reference "
          f"({'inside' if in_band else 'outside'} +-50%)", flush=True)
    record(7, big.passed and small.latency_ms < big.latency_ms,
           f"8x8 {big.latency_ms:.3f} ms < 4 ms, 4x4 {small.latency_ms:.3f} ms < 8x8")


def test_criterion_8_determinism():
    runs = {
        "kernel": ["kernel", "mmse", "--param", "n_sc=16", "--param", "n_rhs=2", "--seed", "11"],
        "ber": ["ber", "--snr", "0:20:10", "--trials", "256", "--n-b", "4", "--n-tx", "4", "--seed", "11"],
        "pusch": ["pusch", "--scenario", "4x4", "--seed", "11"],
    }
    same = {}
    with tempfile.TemporaryDirectory() as tmp:
        for key, argv in runs.items():
            blobs = []
            for i in range(2):
                path = Path(tmp) / f"{key}{i}.json"
                assert cli.main(argv + ["--report", str(path)]) == 0
                blobs.append(path.read_bytes())
            same[key] = blobs[0] == blobs[1]
    record(8, all(same.values()), ", ".join(f"{k} byte-identical={v}" for k, v in same.items()))


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_criterion_")]
    failed = 0
    for t in tests:
        try:
            t()
        except AssertionError:
            failed += 1
    print(f"{len(tests) - failed}/{len(tests)} criteria passed")
    sys.exit(1 if failed else 0)
