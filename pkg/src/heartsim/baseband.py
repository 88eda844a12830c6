"""PUSCH receiver: OFDM demodulation, beamforming, DMRS channel estimation
and MMSE equalization.

Every step runs in one of two modes:

``golden``
    float64 host math.
``simulated``
    the mixed-precision kernels run on the cluster model. Large steps are cut
    into launches that fit in L1 and run back to back. Cycle counts do not
    depend on data, so with ``SimOptions.sampled`` only the first launch of
    each distinct program is simulated (its output is checked bit for bit
    against the functional reference). The remaining launches take their
    values from that reference and reuse the measured counters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import softnum as sn
from .cluster import ClusterConfig, simulate
from .core import SimulatorFault
from .kernels import cfft, chest, matmul, mmse
from .kernels.program import ConfigError
from .perf import KernelPerf

MODES = ("golden", "simulated")
STEPS = ("ofdm", "beamforming", "chest", "mmse")


@dataclass(frozen=True)
class PuschConfig:
    n_rx: int = 32
    n_b: int = 8
    n_tx: int = 8
    n_sc: int = 1024
    n_symbols: int = 14
    n_dmrs: int = 2
    dmrs_symbols: tuple = (2, 11)
    sigma2: float = 0.0
    modulation: str = "qam16"
    sc_spacing_hz: float = 15e3

    def __post_init__(self):
        if not (1 <= self.n_tx <= self.n_b <= self.n_rx):
            raise ConfigError("need n_tx <= n_b <= n_rx")
        if len(self.dmrs_symbols) != self.n_dmrs or len(set(self.dmrs_symbols)) != self.n_dmrs:
            raise ConfigError("dmrs_symbols must list n_dmrs distinct symbols")
        if not all(0 <= s < self.n_symbols for s in self.dmrs_symbols):
            raise ConfigError("DMRS symbol index out of range")
        if self.n_dmrs != 2:
            raise ConfigError("the estimator averages exactly two DMRS symbols")
        cfft.n_digits(self.n_sc)
        if self.n_sc % self.n_tx:
            raise ConfigError("n_sc must be a multiple of n_tx (pilot comb)")
        if self.modulation != "qam16":
            raise ConfigError("only qam16 is supported")
        if self.sigma2 < 0:
            raise ConfigError("noise variance must be non-negative")

    @property
    def n_data(self) -> int:
        return self.n_symbols - self.n_dmrs

    @property
    def data_symbols(self) -> tuple:
        return tuple(s for s in range(self.n_symbols) if s not in self.dmrs_symbols)


SCENARIOS = {
    "8x8": PuschConfig(n_rx=32, n_b=8, n_tx=8),
    "4x4": PuschConfig(n_rx=16, n_b=4, n_tx=4),
}


@dataclass
class SimOptions:
    variant: str = "systolic"
    sampled: bool = True
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    fft_batch: int = 16
    mmse_chunk: int = 128
    chest_window: int = 256


@dataclass
class Recorder:
    """Collects the per-step counters of a simulated run."""

    steps: dict = field(default_factory=dict)

    def add(self, perf: KernelPerf):
        prev = self.steps.get(perf.name)
        self.steps[perf.name] = perf if prev is None else prev + perf

    @property
    def total_cycles(self) -> int:
        return sum(p.cycles for p in self.steps.values())


def _check_mode(mode: str):
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")


def _same_bits(a, b) -> bool:
    a = np.ascontiguousarray(a, dtype=complex)
    b = np.ascontiguousarray(b, dtype=complex)
    return a.shape == b.shape and np.array_equal(a.view(np.float64), b.view(np.float64), equal_nan=True)


def _run_launches(step: str, launches, opts: SimOptions, rec: Recorder | None):
    """``launches``: iterable of ``(key, build, reference, decode)``.

    ``build()`` returns ``(program, expected)``, ``reference()`` the expected
    output without building the program, ``decode(program, memory)`` the
    simulated output. Returns the list of outputs.
    """
    measured: dict = {}
    total = None
    outs = []
    for key, build, reference, decode in launches:
        if opts.sampled and key in measured:
            outs.append(reference())
            kp = measured[key]
        else:
            prog, expected = build()
            run = simulate(prog, opts.cluster)
            out = decode(prog, run.memory)
            if not _same_bits(out, expected):
                raise SimulatorFault(f"{step}: simulated output differs from the functional reference")
            kp = KernelPerf.from_run(step, run)
            measured[key] = kp
            outs.append(out)
        total = kp if total is None else total + kp
    if rec is not None and total is not None:
        rec.add(total)
    return outs


# ---------------------------------------------------------------------------
# OFDM demodulation
# ---------------------------------------------------------------------------
def ofdm_demod(grid, mode: str = "golden", opts: SimOptions | None = None, rec: Recorder | None = None):
    """Forward FFT over the last axis of a (symbols, antennas, n_sc) grid."""
    _check_mode(mode)
    grid = np.asarray(grid, dtype=complex)
    n_sc = grid.shape[-1]
    cfft.n_digits(n_sc)
    if mode == "golden":
        return np.fft.fft(grid, axis=-1)
    opts = opts or SimOptions()
    rows = sn.c16_v(grid.reshape(-1, n_sc))
    bsz = opts.fft_batch
    launches = []
    for r0 in range(0, rows.shape[0], bsz):
        x = rows[r0:r0 + bsz]
        launches.append((
            x.shape[0],
            lambda x=x: cfft.build_cfft(n_sc, opts.variant, x.shape[0], x=x, topo=opts.cluster.topo),
            lambda x=x: cfft.cfft_reference(x),
            cfft.decode_output,
        ))
    outs = _run_launches("ofdm", launches, opts, rec)
    return np.concatenate(outs).reshape(grid.shape)


# ---------------------------------------------------------------------------
# beamforming
# ---------------------------------------------------------------------------
def beam_matrix(n_b: int, n_rx: int) -> np.ndarray:
    """First ``n_b`` rows of the unitary ``n_rx``-point DFT (orthonormal beams)."""
    j, r = np.meshgrid(np.arange(n_b), np.arange(n_rx), indexing="ij")
    return np.exp(-2j * np.pi * j * r / n_rx) / math.sqrt(n_rx)


def beamform(grid, bf, mode: str = "golden", opts: SimOptions | None = None, rec: Recorder | None = None):
    """Z[s] = B Y[s] for every symbol of a (symbols, n_rx, n_sc) grid."""
    _check_mode(mode)
    grid = np.asarray(grid, dtype=complex)
    bf = np.asarray(bf, dtype=complex)
    if bf.shape[1] != grid.shape[1]:
        raise ConfigError("beamforming matrix does not match the antenna count")
    if mode == "golden":
        return np.einsum("br,srk->sbk", bf, grid)
    opts = opts or SimOptions()
    n_b, n_rx = bf.shape
    n_sc = grid.shape[2]
    b16 = sn.c16_v(bf)
    launches = []
    for s in range(grid.shape[0]):
        y = sn.c16_v(grid[s])
        launches.append((
            "bf",
            lambda y=y: matmul.build_cmatmul(n_b, n_rx, n_sc, opts.variant, bf=b16, y=y, topo=opts.cluster.topo),
            lambda y=y: matmul.matmul_reference(b16, y, "c16"),
            lambda prog, mem: matmul.decode_output(prog, mem, (n_b, n_sc), "c16"),
        ))
    return np.stack(_run_launches("beamforming", launches, opts, rec))


# ---------------------------------------------------------------------------
# channel estimation
# ---------------------------------------------------------------------------
def make_pilots(n_sc: int, seed: int = 0, n_dmrs: int = 2) -> np.ndarray:
    """Unit-modulus QPSK pilots drawn from {1, j, -1, -j}."""
    rng = np.random.default_rng(seed)
    return 1j ** rng.integers(0, 4, (n_dmrs, n_sc))


def estimate_channel(dmrs_rx, pilots, n_tx: int, mode: str = "golden", opts: SimOptions | None = None,
                     rec: Recorder | None = None) -> np.ndarray:
    """Comb least-squares estimate; returns (n_sc, n_b, n_tx)."""
    _check_mode(mode)
    dmrs_rx = np.asarray(dmrs_rx, dtype=complex)
    pilots = np.asarray(pilots, dtype=complex)
    _, n_b, n_sc = dmrs_rx.shape
    if n_sc % n_tx or n_sc < 2 * n_tx:
        raise ConfigError("n_sc must be a multiple of n_tx with at least two comb points")
    if np.any(np.abs(pilots) == 0):
        raise SimulatorFault("zero reference pilot")
    if mode == "golden":
        return _estimate_golden(dmrs_rx, pilots, n_tx)
    opts = opts or SimOptions()
    w = opts.chest_window
    rx16, p16 = sn.c16_v(dmrs_rx), sn.c16_v(pilots)
    launches = []
    for k0 in range(0, n_sc, w):
        win = (k0, min(k0 + w, n_sc))
        launches.append((
            win,
            lambda win=win: chest.build_chest(rx16, p16, n_b, n_tx, n_sc, window=win, topo=opts.cluster.topo),
            lambda win=win: chest.chest_reference(rx16, p16, n_tx)[win[0]:win[1]],
            chest.decode_output,
        ))
    return np.concatenate(_run_launches("chest", launches, opts, rec))


def _estimate_golden(rx, pilots, n_tx):
    _, n_b, n_sc = rx.shape
    n_p = n_sc // n_tx
    est = np.zeros((n_sc, n_b, n_tx), dtype=complex)
    for t in range(n_tx):
        kp = t + n_tx * np.arange(n_p)
        p = pilots[:, kp]
        ls = rx[:, :, kp] * np.conj(p)[:, None, :] / (np.abs(p) ** 2)[:, None, :]
        avg = (ls[0] + ls[1]) / 2
        diff = avg[:, 1:] - avg[:, :-1]
        est[:t, :, t] = avg[:, 0]
        for d in range(n_tx):
            est[kp[:-1] + d, :, t] = (avg[:, :-1] + (d / n_tx) * diff).T
        est[kp[-1]:, :, t] = avg[:, -1]
    return est


# ---------------------------------------------------------------------------
# MMSE equalization
# ---------------------------------------------------------------------------
@dataclass
class Detected:
    symbols: np.ndarray   # (n_data, n_tx, n_sc)
    flagged: np.ndarray   # bool per subcarrier: factorization failed, output zeroed

    @property
    def n_flagged(self) -> int:
        return int(np.count_nonzero(self.flagged))


def mmse_equalize(data, h_est, sigma2: float, mode: str = "golden", opts: SimOptions | None = None,
                  rec: Recorder | None = None) -> Detected:
    """x = (H^H H + s2 I)^-1 H^H y per subcarrier.

    ``data`` is (symbols, n_b, n_sc), ``h_est`` (n_sc, n_b, n_tx).
    """
    _check_mode(mode)
    data = np.asarray(data, dtype=complex)
    h_est = np.asarray(h_est, dtype=complex)
    n_sym, n_b, n_sc = data.shape
    if h_est.shape[:2] != (n_sc, n_b):
        raise ConfigError("channel estimate does not match the data grid")
    n_tx = h_est.shape[2]
    if mode == "golden":
        x, bad = _mmse_golden(h_est, data.transpose(0, 2, 1), sigma2)
    else:
        opts = opts or SimOptions()
        y = sn.c16_v(data.transpose(0, 2, 1))       # (rhs, k, n_b)
        h16 = sn.c16_v(h_est)
        launches = []
        for k0 in range(0, n_sc, opts.mmse_chunk):
            ks = slice(k0, min(k0 + opts.mmse_chunk, n_sc))
            nk = ks.stop - ks.start
            launches.append((
                nk,
                lambda ks=ks, nk=nk: _mmse_build(n_b, n_tx, nk, n_sym, h16[ks], y[:, ks], sigma2, opts),
                lambda ks=ks: mmse.mmse_reference(h16[ks], y[:, ks], sigma2)[0],
                mmse.decode_output,
            ))
        x = np.concatenate(_run_launches("mmse", launches, opts, rec), axis=1)
        bad = ~np.all(np.isfinite(x), axis=(0, 2))
    x = np.where(bad[None, :, None], 0, x)
    return Detected(np.ascontiguousarray(x.transpose(0, 2, 1)), bad)


def _mmse_build(n_b, n_tx, nk, n_sym, h, y, sigma2, opts):
    prog, (x, _) = mmse.build_mmse_solver(n_b, n_tx, nk, n_sym, h=h, y=y, sigma2=sigma2, topo=opts.cluster.topo)
    return prog, x


def _mmse_golden(h, y, sigma2):
    """float64 Cholesky solve; ``h`` (K, m, n), ``y`` (R, K, m) -> (R, K, n).

    A zero noise variance is solved as plain zero forcing. Diagonal loading
    by ``mmse.EPS_REG`` is used only for subcarriers whose Gram matrix is not
    numerically positive definite; those still failing, or holding non-finite
    entries, are flagged.
    """
    K, m, n = h.shape
    hh = np.conj(np.swapaxes(h, 1, 2))
    gram = hh @ h + sigma2 * np.eye(n)
    bad = ~np.all(np.isfinite(gram), axis=(1, 2))
    gram[bad] = np.eye(n)
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        chol = np.zeros_like(gram)
        for k in range(K):
            try:
                chol[k] = np.linalg.cholesky(gram[k])
            except np.linalg.LinAlgError:
                try:
                    chol[k] = np.linalg.cholesky(gram[k] + mmse.EPS_REG * np.eye(n))
                except np.linalg.LinAlgError:
                    bad[k] = True
                    chol[k] = np.eye(n)
    z = np.einsum("kim,rkm->rki", hh, y)
    w = np.zeros_like(z)
    for i in range(n):
        w[:, :, i] = (z[:, :, i] - np.einsum("kj,rkj->rk", chol[:, i, :i], w[:, :, :i])) / chol[:, i, i]
    x = np.zeros_like(z)
    for i in reversed(range(n)):
        lc = np.conj(chol[:, i + 1:, i])
        x[:, :, i] = (w[:, :, i] - np.einsum("kj,rkj->rk", lc, x[:, :, i + 1:])) / np.conj(chol[:, i, i])
    return x, bad


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------
@dataclass
class PuschResult:
    detected: Detected
    h_est: np.ndarray
    steps: dict           # step name -> KernelPerf (simulated mode)
    total_cycles: int


def pusch_pipeline(rx_time, cfg: PuschConfig, bf, pilots, mode: str = "golden", opts: SimOptions | None = None,
                   h_known=None) -> PuschResult:
    """OFDM -> beamforming -> channel estimation -> MMSE for one TTI.

    ``rx_time`` is (n_symbols, n_rx, n_sc). With ``h_known`` (n_sc, n_b,
    n_tx) the estimator is skipped (perfect channel knowledge).
    """
    _check_mode(mode)
    rx_time = np.asarray(rx_time)
    if rx_time.shape != (cfg.n_symbols, cfg.n_rx, cfg.n_sc):
        raise ConfigError(f"received grid has shape {rx_time.shape}")
    rec = Recorder()
    freq = ofdm_demod(rx_time, mode, opts, rec)
    beams = beamform(freq, bf, mode, opts, rec)
    if h_known is None:
        h_est = estimate_channel(beams[list(cfg.dmrs_symbols)], pilots, cfg.n_tx, mode, opts, rec)
    else:
        h_est = np.asarray(h_known, dtype=complex)
    det = mmse_equalize(beams[list(cfg.data_symbols)], h_est, cfg.sigma2, mode, opts, rec)
    return PuschResult(det, h_est, rec.steps, rec.total_cycles)
