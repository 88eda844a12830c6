"""Command-line front end.

    heartsim kernel NAME [--variant V] [--param key=value ...] [--corner C]
    heartsim pusch [--scenario 8x8|4x4] [--mode simulated|golden] [--corner C]
    heartsim ber [--snr start:stop:step] [--bits N | --trials N] [--precision P]
    heartsim selftest

Every command prints (or writes with ``--report``) a JSON report. Exit codes:
0 success, 1 selftest failure, 2 configuration error, 3 simulator fault or
deadlock.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import perf, report
from .cluster import ClusterConfig, simulate
from .config import default_seed, load_config, parse_assignments
from .core import SimulatorFault
from .kernels.program import ConfigError
from .kernels.registry import KERNELS, get_kernel, outputs_match
from .memfabric import LatencyTable, MemoryFault

log = logging.getLogger("heartsim")

EXIT_OK, EXIT_SELFTEST, EXIT_CONFIG, EXIT_FAULT = 0, 1, 2, 3
# argparse destinations that never enter the config echo (output locations only)
_NOT_ECHOED = {"report", "csv", "config", "command", "verbose", "func"}


def _cluster_cfg(args) -> ClusterConfig:
    lat = LatencyTable(*args.latency) if getattr(args, "latency", None) else LatencyTable()
    return ClusterConfig(latency=lat)


def _fill_perf(rep: dict, kp: perf.KernelPerf, corner: perf.Corner, domain: str) -> None:
    rep["cycles"] = kp.cycles
    rep["ipc"] = kp.ipc
    rep["stall_fractions"] = kp.fractions() or None
    rep["issued_ops"] = kp.issued
    rep["issued_by_kind"] = kp.issued_by_kind
    if domain == "int":
        rep["gops"] = perf.derive_gops(kp.int_ops, kp.cycles, corner)
    else:
        rep["gflops"] = perf.derive_gflops(kp.flops, kp.cycles, corner)
    rep["latency_ms"] = kp.cycles / corner.frequency_hz * 1e3


def cmd_kernel(args, echo) -> tuple[dict, int]:
    spec = get_kernel(args.name)
    params = parse_assignments(args.param)
    corner = perf.get_corner(args.corner)
    prog, expected = spec.build(args.variant, args.seed, **params)
    run = simulate(prog, _cluster_cfg(args))
    out = spec.decode(prog, run.memory)
    exact = outputs_match(out, expected)
    if not exact:
        raise SimulatorFault(f"{prog.name}: simulated output differs from the functional reference")
    rep = report.new_report("kernel", args.seed, echo, corner)
    _fill_perf(rep, perf.KernelPerf.from_run(args.name, run), corner, spec.domain)
    words = [prog.read_output(run.memory, o.name) for o in prog.outputs]
    rep["outputs_digest"] = report.digest_arrays(*words)
    rep["check"] = {"program": prog.name, "matches_reference": exact, "micro_ops": prog.n_ops}
    return rep, EXIT_OK


def cmd_pusch(args, echo) -> tuple[dict, int]:
    from . import baseband as bb
    from . import linksim as ls

    base = bb.SCENARIOS.get(args.scenario)
    if base is None:
        raise ConfigError(f"unknown scenario {args.scenario!r}; choose from {sorted(bb.SCENARIOS)}")
    corner = perf.get_corner(args.corner)
    tti = ls.synthesize_tti(base, seed=args.seed, snr_db=args.snr_db)
    cfg = dataclasses.replace(base, sigma2=tti.sigma2)
    opts = bb.SimOptions(variant=args.variant, sampled=not args.full, cluster=_cluster_cfg(args))
    res = bb.pusch_pipeline(tti.rx_time, cfg, tti.bf, tti.pilots, args.mode, opts,
                            h_known=tti.h_eff if args.csi == "perfect" else None)
    rep = report.new_report("pusch", args.seed, echo, corner)
    sym = res.detected.symbols
    rep["outputs_digest"] = report.digest_arrays(sym)
    errors = int(np.count_nonzero(ls.qam16_demod(sym) != tti.bits.ravel()))
    rep["check"] = {"bit_errors": errors, "bits": int(tti.bits.size), "flagged_subcarriers": res.detected.n_flagged}
    if args.mode == "simulated":
        total = None
        for kp in res.steps.values():
            total = kp if total is None else total + kp
        total.name = "pusch"
        _fill_perf(rep, total, corner, "float")
        rep["steps"] = {k: report.step_dict(v, corner) for k, v in res.steps.items()}
        rep["gbps"] = perf.derive_pusch_gbps(cfg.n_rx, cfg.n_sc, total.cycles, corner, cfg.n_symbols)
        budget = perf.check_latency_budget(total.cycles, corner)
        rep["latency_ms"] = budget.latency_ms
        rep["budget_pass"] = budget.passed
    return rep, EXIT_OK


def cmd_ber(args, echo) -> tuple[dict, int]:
    from . import linksim as ls

    cfg = ls.LinkConfig(args.n_b, args.n_tx, args.channel, args.csi)
    snrs = ls.parse_snr_range(args.snr)
    trials = args.trials or ls.trials_for_bits(cfg, args.bits)
    pts = ls.ber_sweep(cfg, snrs, trials, args.precision, args.seed, args.workers)
    rep = report.new_report("ber", args.seed, echo, None)
    rep["ber"] = [dataclasses.asdict(p) for p in pts]
    rep["snr_at_1e-3"] = ls.snr_at_ber(pts, 1e-3)
    rep["outputs_digest"] = report.digest_arrays(np.array([[p.bits, p.bit_errors] for p in pts], dtype=np.int64))
    if args.crosscheck:
        cc = ls.simulator_crosscheck(cfg, snrs[0], args.crosscheck, args.seed)
        rep["check"] = {"simulator_crosscheck": dataclasses.asdict(cc)}
    if args.csv:
        Path(args.csv).write_text(ls.points_to_csv(pts))
    return rep, EXIT_OK


def cmd_selftest(args, echo) -> tuple[dict, int]:
    from .selftest import run_selftest

    results = run_selftest(seed=args.seed)
    rep = report.new_report("selftest", args.seed, echo, None)
    rep["selftest"] = [{"name": n, "passed": ok, "detail": d} for n, ok, d in results]
    rep["outputs_digest"] = report.digest_arrays(np.array([ok for _, ok, _ in results], dtype=bool))
    return rep, EXIT_OK if all(ok for _, ok, _ in results) else EXIT_SELFTEST


def _latency_arg(text: str):
    parts = [int(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("latency needs three comma-separated values")
    return tuple(parts)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="heartsim", description="64-core systolic cluster and PUSCH receiver model")
    p.add_argument("--version", action="version", version=f"heartsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, corner=None):
        sp.add_argument("--seed", type=int, default=None, help="default: $HEARTSIM_SEED or 0")
        sp.add_argument("--config", help="key = value or JSON file; explicit flags win")
        sp.add_argument("--report", help="write the JSON report here instead of stdout")
        if corner:
            sp.add_argument("--corner", default=corner, choices=sorted(perf.CORNERS))
            sp.add_argument("--latency", type=_latency_arg, default=None, metavar="TILE,GROUP,CLUSTER",
                            help="L1 load latencies in cycles (default 1,3,5)")

    k = sub.add_parser("kernel", help="run one kernel on the cluster")
    k.add_argument("name", choices=sorted(KERNELS))
    k.add_argument("--variant", default=None)
    k.add_argument("--param", action="append", default=[], metavar="KEY=VALUE", help="kernel size parameter")
    common(k, "800MHz")
    k.set_defaults(func=cmd_kernel)

    ps = sub.add_parser("pusch", help="run one PUSCH TTI through the receiver")
    ps.add_argument("--scenario", default="8x8")
    ps.add_argument("--mode", default="simulated", choices=["simulated", "golden"])
    ps.add_argument("--variant", default="systolic", choices=["systolic", "baseline"])
    ps.add_argument("--csi", default="estimated", choices=["estimated", "perfect"])
    ps.add_argument("--snr-db", type=float, default=None, help="default: noiseless")
    ps.add_argument("--full", action="store_true", help="simulate every launch instead of one per distinct program")
    common(ps, "645MHz")
    ps.set_defaults(func=cmd_pusch)

    b = sub.add_parser("ber", help="BER-versus-SNR sweep")
    b.add_argument("--snr", default="0:30:2", help="start:stop:step (inclusive) or a comma list")
    b.add_argument("--bits", type=int, default=1_000_000, help="bits per SNR point")
    b.add_argument("--trials", type=int, default=None, help="channel uses per point (overrides --bits)")
    b.add_argument("--precision", default="mixed", choices=["mixed", "golden"])
    b.add_argument("--channel", default="rayleigh", choices=["rayleigh", "identity"])
    b.add_argument("--csi", default="perfect", choices=["perfect", "estimated"])
    b.add_argument("--n-b", type=int, default=16)
    b.add_argument("--n-tx", type=int, default=16)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--crosscheck", type=int, default=0, metavar="N",
                   help="also run N <= 100 trials of the first SNR through the cluster model")
    b.add_argument("--csv", help="write the curve as CSV")
    common(b)
    b.set_defaults(func=cmd_ber)

    st = sub.add_parser("selftest", help="run the built-in invariant checks")
    common(st)
    st.set_defaults(func=cmd_selftest)
    return p


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if args.config:
        cfg = load_config(args.config)
        # kernel sizes may be given as "param.NAME = VALUE" lines
        sizes = [f"{k[6:]}={v}" for k, v in cfg.items() if k.startswith("param.")]
        cfg = {k: v for k, v in cfg.items() if not k.startswith("param.")}
        if sizes:
            cfg["param"] = sizes
        known = set(vars(args)) - _NOT_ECHOED
        unknown = sorted(set(k.replace("-", "_") for k in cfg) - known)
        if unknown:
            raise ConfigError(f"config keys not valid for '{args.command}': {unknown}")
        sp = parser._subparsers._group_actions[0].choices[args.command]
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = default_seed()
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        echo = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
        rep, code = args.func(args, echo)
        report.validate_report(rep)
        text = report.dumps(rep)
        if args.report:
            Path(args.report).write_text(text)
        else:
            sys.stdout.write(text)
        return code
    except (ConfigError, ValueError) as exc:
        print(f"heartsim: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulatorFault, MemoryFault) as exc:
        print(f"heartsim: simulator fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
