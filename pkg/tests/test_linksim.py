import csv
import io
import json
import math

import numpy as np
import pytest

from heartsim.kernels.program import ConfigError
from heartsim.linksim import (BerPoint, LinkConfig, apply_channel, ber_point, ber_sweep, curves_agree, gen_channel,
                              noise_variance, parse_snr_range, points_to_csv, points_to_json, qam16_demod, qam16_mod,
                              simulator_crosscheck, snr_at_ber, trials_for_bits)

S = 1 / math.sqrt(10)


@pytest.mark.parametrize("bits, sym", [
    ((0, 0, 0, 0), (1 + 1j) * S),
    ((1, 0, 0, 0), (-1 + 1j) * S),
    ((0, 1, 0, 0), (1 - 1j) * S),
    ((0, 0, 1, 0), (3 + 1j) * S),
    ((1, 1, 1, 1), (-3 - 3j) * S),
])
def test_qam16_examples(bits, sym):
    assert np.isclose(qam16_mod(bits)[0], sym)
    assert qam16_demod([sym]).tolist() == list(bits)


def test_qam16_unit_energy_gray_and_round_trip():
    all_bits = np.array([[(v >> s) & 1 for s in range(4)] for v in range(16)])
    syms = qam16_mod(all_bits)
    assert np.isclose(np.mean(np.abs(syms) ** 2), 1.0)
    assert np.array_equal(qam16_demod(syms), all_bits.ravel())
    # Gray: nearest neighbours differ in exactly one bit
    for i in range(16):
        d = np.abs(syms - syms[i])
        for j in np.flatnonzero(np.isclose(d, 2 * S)):
            assert np.sum(all_bits[i] != all_bits[j]) == 1
    with pytest.raises(ValueError):
        qam16_mod([0, 1, 1])


def test_noise_calibration_within_one_percent():
    h = gen_channel(16, 16, seed=0, count=2000)
    rng = np.random.default_rng(1)
    x = qam16_mod(rng.integers(0, 2, 2000 * 16 * 4)).reshape(2000, 16)
    y0, _ = apply_channel(h, x, None)
    y, s2 = apply_channel(h, x, 10.0, seed=2)
    assert s2 == pytest.approx(noise_variance(h, 10.0))
    measured_snr = np.mean(np.abs(y0) ** 2) / np.mean(np.abs(y - y0) ** 2)
    assert measured_snr == pytest.approx(10.0, rel=0.01)


def test_rayleigh_entries_are_unit_variance():
    h = gen_channel(16, 16, seed=3, count=500)
    assert np.mean(np.abs(h) ** 2) == pytest.approx(1.0, rel=0.01)
    assert abs(np.mean(h)) < 0.01
    with pytest.raises(ConfigError):
        gen_channel(4, 2, model="identity")


def test_link_config_validation():
    with pytest.raises(ConfigError):
        LinkConfig(n_b=4, n_tx=8)
    with pytest.raises(ConfigError):
        LinkConfig(channel="awgn")
    with pytest.raises(ConfigError):
        LinkConfig(csi="genie")


@pytest.mark.parametrize("precision", ["mixed", "golden"])
def test_identity_channel_noiseless_is_error_free(precision):
    p = ber_point(LinkConfig(4, 4, channel="identity"), None, 300, precision)
    assert p.bit_errors == 0 and p.ber == 0.0 and p.bits == 300 * 16


def test_ber_point_deterministic_and_worker_independent():
    cfg = LinkConfig(4, 4)
    a = ber_point(cfg, 8.0, 2500, seed=5)
    b = ber_point(cfg, 8.0, 2500, seed=5)
    c = ber_point(cfg, 8.0, 2500, seed=5, workers=2)
    assert a == b == c
    assert ber_point(cfg, 8.0, 2500, seed=6) != a


def test_ber_decreases_with_snr_and_precisions_agree():
    cfg = LinkConfig(4, 4)
    snrs = [5.0, 15.0, 25.0]
    mixed = ber_sweep(cfg, snrs, 3000, "mixed", seed=1)
    golden = ber_sweep(cfg, snrs, 3000, "golden", seed=1)
    assert mixed[0].ber > mixed[1].ber > mixed[2].ber
    assert all(curves_agree(m, g) for m, g in zip(mixed, golden))


def test_estimated_csi_is_worse_than_perfect():
    perfect = ber_point(LinkConfig(4, 4), 15.0, 3000, "golden", seed=2)
    est = ber_point(LinkConfig(4, 4, csi="estimated"), 15.0, 3000, "golden", seed=2)
    assert est.ber > perfect.ber


def test_ber_point_interval():
    p = BerPoint.from_counts(10.0, 10, 1000, 100)
    assert p.ber == 0.1
    assert p.ci == pytest.approx(1.96 * math.sqrt(0.1 * 0.9 / 1000))
    with pytest.raises(ConfigError):
        ber_point(LinkConfig(), 10.0, 0)
    with pytest.raises(ConfigError):
        ber_point(LinkConfig(), 10.0, 10, precision="half")


def test_trials_for_bits():
    assert trials_for_bits(LinkConfig(), 10 ** 6) == 15625
    assert trials_for_bits(LinkConfig(4, 4), 17) == 2


def test_parse_snr_range():
    assert parse_snr_range("0:4:2") == [0.0, 2.0, 4.0]
    assert parse_snr_range("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_snr_range("3, 7.5") == [3.0, 7.5]
    for bad in ("5:0:1", "0:1", "0:4:0"):
        with pytest.raises(ConfigError):
            parse_snr_range(bad)


def test_snr_at_ber_interpolates_in_log_domain():
    pts = [BerPoint.from_counts(s, 1, 10 ** 6, e) for s, e in ((10.0, 10 ** 4), (20.0, 10 ** 2), (30.0, 0))]
    assert snr_at_ber(pts, 1e-3) == pytest.approx(15.0)
    assert snr_at_ber(pts, 1e-5) == 30.0
    assert snr_at_ber(pts[:1], 1e-3) is None


def test_csv_and_json_output():
    pts = [BerPoint.from_counts(0.0, 5, 320, 40), BerPoint.from_counts(2.0, 5, 320, 7)]
    rows = list(csv.reader(io.StringIO(points_to_csv(pts))))
    assert rows[0] == ["snr_db", "trials", "errors", "ber", "ci"]
    assert [float(r[3]) for r in rows[1:]] == [0.125, 7 / 320]
    data = json.loads(points_to_json(pts))
    assert data[1]["bit_errors"] == 7 and data[0]["snr_db"] == 0.0


def test_simulator_crosscheck_matches_functional_model():
    cfg = LinkConfig(4, 4)
    p = simulator_crosscheck(cfg, 20.0, 16, seed=3)
    assert p.bits == 16 * 16
    assert p.ber <= 0.25
    with pytest.raises(ConfigError):
        simulator_crosscheck(cfg, 20.0, 101)
