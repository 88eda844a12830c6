"""Link-level Monte-Carlo: QAM16 over a MIMO channel, MMSE detection,
hard demapping and BER-versus-SNR curves.

Seeding
-------
Trials are grouped in fixed blocks of :data:`BLOCK_TRIALS`. Block ``b`` of
SNR point ``i`` draws from ``SeedSequence([seed, i, b])``. A block's result
does not depend on which worker ran it, so the merged error counts are
identical for any worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import softnum as sn
from .baseband import PuschConfig, _mmse_golden, beam_matrix, make_pilots
from .core import SimulatorFault
from .kernels import mmse
from .kernels.program import ConfigError

BLOCK_TRIALS = 1024
BITS_PER_SYMBOL = 4
_SCALE = 1 / math.sqrt(10)
PRECISIONS = ("mixed", "golden")
CHANNELS = ("rayleigh", "identity")
CSI = ("perfect", "estimated")


# ---------------------------------------------------------------------------
# QAM16 (Gray mapped; b0/b2 select the in-phase level, b1/b3 the quadrature)
# ---------------------------------------------------------------------------
def qam16_mod(bits) -> np.ndarray:
    """Map groups of 4 bits to unit-energy 16QAM symbols.

    Level per axis: ``(1 - 2 b_hi) * (2 - (1 - 2 b_lo))`` scaled by
    ``1/sqrt(10)``, so ``0000`` maps to ``(1 + 1j)/sqrt(10)``.
    """
    b = np.asarray(bits, dtype=np.int64)
    if b.size % BITS_PER_SYMBOL:
        raise ValueError("bit count must be a multiple of 4")
    b = b.reshape(-1, 4)
    i = (1 - 2 * b[:, 0]) * (2 - (1 - 2 * b[:, 2]))
    q = (1 - 2 * b[:, 1]) * (2 - (1 - 2 * b[:, 3]))
    return (i + 1j * q) * _SCALE


def qam16_demod(symbols) -> np.ndarray:
    """Minimum-distance hard decisions (per-axis slicing of the square grid)."""
    s = np.asarray(symbols, dtype=complex).ravel() / _SCALE
    out = np.empty((s.size, 4), dtype=np.int64)
    out[:, 0] = s.real < 0
    out[:, 1] = s.imag < 0
    out[:, 2] = np.abs(s.real) > 2
    out[:, 3] = np.abs(s.imag) > 2
    return out.ravel()


# ---------------------------------------------------------------------------
# channel
# ---------------------------------------------------------------------------
def gen_channel(n_b: int, n_tx: int, seed=None, model: str = "rayleigh", count: int | None = None,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """i.i.d. CN(0, 1) entries (``rayleigh``) or the identity; with ``count``
    a stack of independent draws is returned."""
    if model not in CHANNELS:
        raise ConfigError(f"unknown channel model {model!r}")
    rng = rng or np.random.default_rng(seed)
    shape = (n_b, n_tx) if count is None else (count, n_b, n_tx)
    if model == "identity":
        if n_b != n_tx:
            raise ConfigError("identity channel needs n_b == n_tx")
        return np.broadcast_to(np.eye(n_b, dtype=complex), shape).copy()
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)


def noise_variance(h, snr_db: float) -> float:
    """Complex noise variance per receive antenna for the requested SNR.

    The SNR is ``E|Hx|^2 / E|n|^2`` with unit-energy symbols, i.e. the mean
    squared channel row norm over the noise variance.
    """
    h = np.asarray(h)
    row_power = float(np.mean(np.sum(np.abs(h) ** 2, axis=-1)))
    return row_power / 10 ** (snr_db / 10)


def apply_channel(h, x, snr_db: float | None, seed=None, rng: np.random.Generator | None = None,
                  sigma2: float | None = None):
    """``y = H x + n``. ``snr_db=None`` means noiseless. ``h`` is (..., n_b,
    n_tx) and ``x`` (..., n_tx). Returns ``(y, sigma2)``."""
    h = np.asarray(h)
    x = np.asarray(x)
    y = np.einsum("...bt,...t->...b", h, x)
    if snr_db is None:
        return y, 0.0
    rng = rng or np.random.default_rng(seed)
    s2 = noise_variance(h, snr_db) if sigma2 is None else sigma2
    n = (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) * math.sqrt(s2 / 2)
    return y + n, s2


# ---------------------------------------------------------------------------
# BER
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class LinkConfig:
    n_b: int = 16
    n_tx: int = 16
    channel: str = "rayleigh"
    csi: str = "perfect"

    def __post_init__(self):
        if not 1 <= self.n_tx <= self.n_b <= mmse.MAX_DIM:
            raise ConfigError(f"need 1 <= n_tx <= n_b <= {mmse.MAX_DIM}")
        if self.channel not in CHANNELS:
            raise ConfigError(f"unknown channel model {self.channel!r}")
        if self.csi not in CSI:
            raise ConfigError(f"unknown CSI mode {self.csi!r}")


@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    trials: int
    bits: int
    bit_errors: int
    ber: float
    ci: float  # 95% half-width, normal approximation

    @classmethod
    def from_counts(cls, snr_db, trials, bits, errors):
        if trials <= 0 or bits <= 0:
            raise ValueError("a BER point needs at least one trial")
        p = errors / bits
        return cls(float(snr_db), int(trials), int(bits), int(errors), p, 1.96 * math.sqrt(p * (1 - p) / bits))


def _detect(h, y, sigma2, precision):
    """MMSE detection of a stack of channel uses: ``h`` (K, n_b, n_tx), ``y`` (K, n_b)."""
    if precision == "golden":
        x, bad = _mmse_golden(h, y[None], sigma2)
    else:
        x, bad = mmse.mmse_reference(h, y[None], sigma2)
    x = np.where(bad[None, :, None], 0, x)
    return x[0]


def _simulate_block(cfg: LinkConfig, snr_db, trials, precision, seed_words):
    """Draw and detect ``trials`` channel uses; returns ``(bits, errors)``."""
    rng = np.random.default_rng(np.random.SeedSequence(seed_words))
    n_bits = trials * cfg.n_tx * BITS_PER_SYMBOL
    bits = rng.integers(0, 2, n_bits)
    x = qam16_mod(bits).reshape(trials, cfg.n_tx)
    h = gen_channel(cfg.n_b, cfg.n_tx, model=cfg.channel, count=trials, rng=rng)
    noiseless = snr_db is None or math.isinf(snr_db)
    y, s2 = apply_channel(h, x, None if noiseless else snr_db, rng=rng)
    h_det = h
    if cfg.csi == "estimated" and not noiseless:
        # two orthogonal pilot transmissions per transmitter, averaged
        e = (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)) * math.sqrt(s2 / 4)
        h_det = h + e
    if precision == "mixed":
        h_det, y = sn.c16_v(h_det), sn.c16_v(y)
    xh = _detect(h_det, y, s2, precision)
    return n_bits, int(np.count_nonzero(qam16_demod(xh) != bits))


def _block_plan(n_trials):
    full, rest = divmod(n_trials, BLOCK_TRIALS)
    return [BLOCK_TRIALS] * full + ([rest] if rest else [])


def ber_point(cfg: LinkConfig, snr_db, n_trials: int, precision: str = "mixed", seed: int = 0,
              point_index: int = 0, workers: int = 1) -> BerPoint:
    """Monte-Carlo BER at one SNR (``None`` or ``inf`` = noiseless)."""
    if precision not in PRECISIONS:
        raise ConfigError(f"unknown precision {precision!r}")
    if n_trials <= 0:
        raise ConfigError("n_trials must be positive")
    plan = _block_plan(n_trials)
    jobs = [(cfg, snr_db, t, precision, [seed, point_index, b]) for b, t in enumerate(plan)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_simulate_block_star, jobs))
    else:
        results = [_simulate_block(*j) for j in jobs]
    bits = sum(r[0] for r in results)
    errors = sum(r[1] for r in results)
    return BerPoint.from_counts(math.inf if snr_db is None else snr_db, n_trials, bits, errors)


def _simulate_block_star(args):
    return _simulate_block(*args)


def trials_for_bits(cfg: LinkConfig, n_bits: int) -> int:
    return -(-n_bits // (cfg.n_tx * BITS_PER_SYMBOL))


def ber_sweep(cfg: LinkConfig, snrs, n_trials: int, precision: str = "mixed", seed: int = 0,
              workers: int = 1) -> list:
    return [ber_point(cfg, s, n_trials, precision, seed, i, workers) for i, s in enumerate(snrs)]


def parse_snr_range(text: str) -> list:
    """``start:stop:step`` (stop inclusive) or a comma-separated list."""
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise ConfigError(f"bad SNR range {text!r}; expected start:stop:step")
        start, stop, step = parts
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 10) for i in range(n)]
    return [float(p) for p in text.split(",") if p.strip()]


def snr_at_ber(points, target: float = 1e-3):
    """SNR where the curve crosses ``target`` (log-linear interpolation), or None."""
    pts = sorted(points, key=lambda p: p.snr_db)
    for a, b in zip(pts, pts[1:]):
        if a.ber >= target > b.ber:
            if b.ber == 0:
                return b.snr_db
            la, lb, lt = math.log10(a.ber), math.log10(b.ber), math.log10(target)
            return a.snr_db + (la - lt) / (la - lb) * (b.snr_db - a.snr_db)
    return None


def curves_agree(p1, p2, factor: float = 3.0) -> bool:
    """Both BERs within ``factor`` combined 95% half-widths of each other."""
    return abs(p1.ber - p2.ber) <= factor * math.hypot(p1.ci, p2.ci)


def points_to_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["snr_db", "trials", "errors", "ber", "ci"])
    for p in points:
        w.writerow([p.snr_db, p.trials, p.bit_errors, repr(p.ber), repr(p.ci)])
    return buf.getvalue()


def points_to_json(points) -> str:
    return json.dumps([asdict(p) for p in points], sort_keys=True)


def simulator_crosscheck(cfg: LinkConfig, snr_db, n_trials: int, seed: int = 0, sim_opts=None) -> BerPoint:
    """Run up to 100 mixed-precision trials through the cluster model.

    The detector program must reproduce the functional mixed-precision
    result bit for bit; the BER is then computed from the simulated output.
    """
    from .baseband import SimOptions, mmse_equalize

    if not 0 < n_trials <= 100:
        raise ConfigError("the simulator cross-check runs 1..100 trials")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0, 0]))
    n_bits = n_trials * cfg.n_tx * BITS_PER_SYMBOL
    bits = rng.integers(0, 2, n_bits)
    x = qam16_mod(bits).reshape(n_trials, cfg.n_tx)
    h = gen_channel(cfg.n_b, cfg.n_tx, model=cfg.channel, count=n_trials, rng=rng)
    y, s2 = apply_channel(h, x, snr_db, rng=rng)
    h16, y16 = sn.c16_v(h), sn.c16_v(y)
    # trials play the role of subcarriers: data (1, n_b, K), estimate (K, n_b, n_tx)
    opts = sim_opts or SimOptions(sampled=False)
    det = mmse_equalize(y16.T[None], h16, s2, "simulated", opts)
    ref = _detect(h16, y16, s2, "mixed")
    got = det.symbols[0].T
    if not np.array_equal(np.nan_to_num(got), np.nan_to_num(ref)):
        raise SimulatorFault("cluster detector disagrees with the functional model")
    errors = int(np.count_nonzero(qam16_demod(got) != bits))
    return BerPoint.from_counts(snr_db, n_trials, n_bits, errors)


# ---------------------------------------------------------------------------
# TTI synthesis for the receiver pipeline
# ---------------------------------------------------------------------------
@dataclass
class Tti:
    rx_time: np.ndarray      # (n_symbols, n_rx, n_sc)
    bits: np.ndarray         # (n_data, n_tx, n_sc, 4)
    tx_symbols: np.ndarray   # (n_data, n_tx, n_sc)
    h_freq: np.ndarray       # (n_sc, n_rx, n_tx) antenna-domain channel
    h_eff: np.ndarray        # (n_sc, n_b, n_tx) beam-domain channel B H
    bf: np.ndarray           # (n_b, n_rx)
    pilots: np.ndarray       # (2, n_sc)
    sigma2: float


def synthesize_tti(cfg: PuschConfig, seed: int = 0, snr_db: float | None = None, n_taps: int = 4) -> Tti:
    """Transmit one TTI over a frequency-selective Rayleigh channel.

    Each (rx, tx) path has ``n_taps`` equal-power taps one sample apart, so
    the channel varies smoothly across subcarriers. DMRS symbol d carries
    ``pilots[d, k]`` from transmitter ``k % n_tx`` on subcarrier k. The
    time-domain grid is the inverse FFT of the received frequency grid.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    n_sc, n_rx, n_tx, n_b = cfg.n_sc, cfg.n_rx, cfg.n_tx, cfg.n_b
    taps = (rng.standard_normal((n_taps, n_rx, n_tx)) + 1j * rng.standard_normal((n_taps, n_rx, n_tx))) / math.sqrt(2 * n_taps)
    phase = np.exp(-2j * np.pi * np.outer(np.arange(n_sc), np.arange(n_taps)) / n_sc)
    h = np.einsum("kl,lrt->krt", phase, taps)
    bf = beam_matrix(n_b, n_rx)
    pilots = make_pilots(n_sc, seed)
    bits = rng.integers(0, 2, (cfg.n_data, n_tx, n_sc, BITS_PER_SYMBOL))
    data = qam16_mod(bits).reshape(cfg.n_data, n_tx, n_sc)
    tx = np.zeros((cfg.n_symbols, n_tx, n_sc), dtype=complex)
    for i, s in enumerate(cfg.data_symbols):
        tx[s] = data[i]
    comb = np.arange(n_sc) % n_tx
    for d, s in enumerate(cfg.dmrs_symbols):
        tx[s, comb, np.arange(n_sc)] = pilots[d]
    y = np.einsum("krt,stk->srk", h, tx)
    sigma2 = cfg.sigma2
    if snr_db is not None:
        sigma2 = noise_variance(h, snr_db)
    if sigma2 > 0:
        y = y + (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)) * math.sqrt(sigma2 / 2)
    return Tti(
        rx_time=np.fft.ifft(y, axis=-1),
        bits=bits,
        tx_symbols=data,
        h_freq=h,
        h_eff=np.einsum("br,krt->kbt", bf, h),
        bf=bf,
        pilots=pilots,
        sigma2=sigma2,
    )
