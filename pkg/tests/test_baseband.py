import numpy as np
import pytest

from heartsim import softnum as sn
from heartsim.baseband import (STEPS, PuschConfig, SimOptions, beam_matrix, beamform, estimate_channel, make_pilots,
                               mmse_equalize, ofdm_demod, pusch_pipeline)
from heartsim.kernels.program import ConfigError
from heartsim.linksim import qam16_demod, synthesize_tti
from oracles import dft, mmse_naive, rel_rms

SMALL = PuschConfig(n_rx=8, n_b=4, n_tx=4, n_sc=64)


def test_config_validation():
    with pytest.raises(ConfigError):
        PuschConfig(n_b=4, n_tx=8)
    with pytest.raises(ConfigError):
        PuschConfig(n_sc=1000)
    with pytest.raises(ConfigError):
        PuschConfig(dmrs_symbols=(2, 2))
    with pytest.raises(ConfigError):
        PuschConfig(sigma2=-1.0)
    assert PuschConfig().data_symbols == (0, 1, 3, 4, 5, 6, 7, 8, 9, 10, 12, 13)


def test_ofdm_impulse_and_round_trip():
    x = np.zeros((1, 1, 64), dtype=complex)
    x[..., 0] = 1
    assert np.allclose(ofdm_demod(x), 1, atol=1e-12)
    rng = np.random.default_rng(0)
    freq = rng.standard_normal((2, 3, 256)) + 1j * rng.standard_normal((2, 3, 256))
    assert np.max(np.abs(ofdm_demod(np.fft.ifft(freq, axis=-1)) - freq)) <= 1e-12
    assert np.allclose(ofdm_demod(freq[:1, :1]), dft(freq[:1, :1]), atol=1e-9)


def test_beam_matrix_is_orthonormal_and_beamform_linear():
    b = beam_matrix(8, 32)
    assert np.allclose(b @ b.conj().T, np.eye(8), atol=1e-12)
    rng = np.random.default_rng(1)
    g1 = rng.standard_normal((2, 32, 16)) + 1j * rng.standard_normal((2, 32, 16))
    g2 = rng.standard_normal((2, 32, 16)) + 1j * rng.standard_normal((2, 32, 16))
    lhs = beamform(2 * g1 - 3j * g2, b)
    assert np.allclose(lhs, 2 * beamform(g1, b) - 3j * beamform(g2, b), atol=1e-12)
    with pytest.raises(ConfigError):
        beamform(g1, beam_matrix(8, 16))


def test_pilots_are_unit_modulus_qpsk():
    p = make_pilots(1024, seed=3)
    assert p.shape == (2, 1024)
    assert np.allclose(np.abs(p), 1)
    assert set(np.round(p.ravel(), 12)) <= {1, 1j, -1, -1j}


def test_channel_estimate_exact_for_flat_channel():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    pilots = make_pilots(64, seed=2)
    comb = np.arange(64) % 4
    rx = np.stack([h[:, comb] * pilots[d] for d in range(2)])
    est = estimate_channel(rx, pilots, 4)
    assert est.shape == (64, 4, 4)
    assert np.allclose(est, h, atol=1e-12)


def test_channel_estimate_interpolates_linear_phase_ramp():
    # a channel that is linear in k is reproduced exactly between pilots
    k = np.arange(64)
    h = (1 + 0.01 * k)[:, None, None] * np.ones((1, 2, 2))
    pilots = make_pilots(64, seed=5)
    rx = np.stack([h[k, :, k % 2] .T * pilots[d] for d in range(2)])
    est = estimate_channel(rx, pilots, 2)
    inner = slice(1, 63)  # outside the first and last comb points the estimate is held flat
    assert np.allclose(est[inner], h[inner], atol=1e-12)


def test_mmse_equalize_matches_naive_solver():
    rng = np.random.default_rng(3)
    h = rng.standard_normal((16, 4, 4)) + 1j * rng.standard_normal((16, 4, 4))
    data = rng.standard_normal((3, 4, 16)) + 1j * rng.standard_normal((3, 4, 16))
    det = mmse_equalize(data, h, 0.2)
    assert det.symbols.shape == (3, 4, 16) and det.n_flagged == 0
    for s in range(3):
        for k in range(16):
            assert np.allclose(det.symbols[s, :, k], mmse_naive(h[k], data[s, :, k], 0.2), atol=1e-10)


def test_mmse_singular_and_invalid_subcarriers():
    h = np.zeros((4, 2, 2), dtype=complex)
    h[:] = np.eye(2)
    h[1] = 0          # singular Gram matrix: diagonal loading rescues it
    h[2, 0, 0] = np.nan  # no loading helps: flagged and zeroed
    det = mmse_equalize(np.ones((1, 2, 4), dtype=complex), h, 0.0)
    assert det.flagged.tolist() == [False, False, True, False]
    assert np.all(det.symbols[:, :, 1] == 0) and np.all(det.symbols[:, :, 2] == 0)
    assert np.allclose(det.symbols[:, :, 0], 1)


def test_noiseless_perfect_csi_golden_recovers_symbols():
    tti = synthesize_tti(SMALL, seed=4)
    res = pusch_pipeline(tti.rx_time, SMALL, tti.bf, tti.pilots, "golden", h_known=tti.h_eff)
    assert res.detected.symbols.shape == (SMALL.n_data, SMALL.n_tx, SMALL.n_sc)
    assert np.max(np.abs(res.detected.symbols - tti.tx_symbols)) <= 1e-9
    assert np.array_equal(qam16_demod(res.detected.symbols), tti.bits.ravel())
    assert res.steps == {} and res.total_cycles == 0


def test_pipeline_rejects_wrong_grid_shape():
    tti = synthesize_tti(SMALL, seed=0)
    with pytest.raises(ConfigError):
        pusch_pipeline(tti.rx_time[:, :4], SMALL, tti.bf, tti.pilots)
    with pytest.raises(ConfigError):
        pusch_pipeline(tti.rx_time, SMALL, tti.bf, tti.pilots, mode="fast")


@pytest.fixture(scope="module")
def small_runs():
    tti = synthesize_tti(SMALL, seed=6)
    golden = pusch_pipeline(tti.rx_time, SMALL, tti.bf, tti.pilots, "golden")
    sim = pusch_pipeline(tti.rx_time, SMALL, tti.bf, tti.pilots, "simulated", SimOptions())
    return tti, golden, sim


def test_simulated_pipeline_tracks_golden(small_runs):
    tti, golden, sim = small_runs
    assert rel_rms(sim.detected.symbols, golden.detected.symbols) <= 2.0 ** -8
    assert np.mean(qam16_demod(sim.detected.symbols) != qam16_demod(golden.detected.symbols)) <= 1e-3


def test_simulated_pipeline_records_every_step(small_runs):
    _, _, sim = small_runs
    assert list(sim.steps) == list(STEPS)
    assert sim.total_cycles == sum(kp.cycles for kp in sim.steps.values())
    for kp in sim.steps.values():
        assert kp.cycles > 0 and 0 < kp.ipc <= 1
        assert sum(kp.fractions().values()) == pytest.approx(1.0, abs=1e-9)


def test_sampled_launches_equal_full_simulation():
    tti = synthesize_tti(SMALL, seed=7, snr_db=20)
    cfg = PuschConfig(n_rx=8, n_b=4, n_tx=4, n_sc=64, sigma2=tti.sigma2)
    full = pusch_pipeline(tti.rx_time, cfg, tti.bf, tti.pilots, "simulated", SimOptions(sampled=False))
    sampled = pusch_pipeline(tti.rx_time, cfg, tti.bf, tti.pilots, "simulated", SimOptions(sampled=True))
    assert np.array_equal(full.detected.symbols.view(np.float64), sampled.detected.symbols.view(np.float64))
    assert full.total_cycles == sampled.total_cycles
    for step in STEPS:
        assert full.steps[step].issued == sampled.steps[step].issued


def test_simulated_ofdm_matches_half_precision_dft():
    rng = np.random.default_rng(8)
    grid = (rng.standard_normal((2, 2, 64)) + 1j * rng.standard_normal((2, 2, 64))) / np.sqrt(2)
    out = ofdm_demod(grid, "simulated", SimOptions(fft_batch=2))
    assert rel_rms(out, dft(sn.c16_v(grid))) <= 2.0 ** -8
