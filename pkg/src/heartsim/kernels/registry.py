"""Named kernels with their default sizes, for the command line and the
cross-kernel test suites.

Every entry builds a ``(program, reference)`` pair and knows how to decode
the program's output from a final memory image, so a run can be checked
against its functional reference without knowing the kernel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..memfabric import Topology
from . import cfft, chest, dl, matmul, mmse
from .program import ConfigError


@dataclass(frozen=True)
class KernelSpec:
    name: str
    domain: str              # "float" (baseband, FLOP-counted) or "int" (DL, OP-counted)
    variants: tuple
    defaults: dict = field(default_factory=dict)
    doc: str = ""

    def build(self, variant=None, seed: int = 0, topo: Topology = Topology(), **params):
        variant = variant or self.variants[0]
        if variant not in self.variants:
            raise ConfigError(f"kernel {self.name} has no variant {variant!r}; choose from {self.variants}")
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"kernel {self.name} does not take {sorted(unknown)}")
        p = {**self.defaults, **params}
        return _BUILDERS[self.name](variant, seed, topo, p)

    def decode(self, prog, memory):
        return _DECODERS[self.name](prog, memory)


def _matmul(variant, seed, topo, p):
    return matmul.build_matmul(p["m"], p["n"], p["p"], variant, "int32", seed=seed, topo=topo)


def _cmatmul(variant, seed, topo, p):
    return matmul.build_cmatmul(p["n_b"], p["n_rx"], p["n_sc"], variant, seed=seed, topo=topo)


def _cfft(variant, seed, topo, p):
    return cfft.build_cfft(p["n_fft"], variant, p["batch"], seed=seed, topo=topo)


def _conv2d(variant, seed, topo, p):
    return dl.build_conv2d(p["h"], p["w"], p["k"], seed=seed, topo=topo)


def _dotp(variant, seed, topo, p):
    return dl.build_dotp(p["length"], seed=seed, topo=topo)


def _mmse(variant, seed, topo, p):
    prog, (x, _) = mmse.build_mmse_solver(p["n_b"], p["n_tx"], p["n_sc"], p["n_rhs"], sigma2=p["sigma2"],
                                          seed=seed, topo=topo)
    return prog, x


def _chest(variant, seed, topo, p):
    return chest.build_chest(n_b=p["n_b"], n_tx=p["n_tx"], n_sc=p["n_sc"], window=(p["k0"], p["k1"]),
                             seed=seed, topo=topo)


def _decode_matmul(prog, memory):
    m = prog.meta
    return matmul.decode_output(prog, memory, (m["m"], m["p"]), m["elem"])


_BUILDERS = {
    "matmul": _matmul, "cmatmul": _cmatmul, "cfft": _cfft, "conv2d": _conv2d,
    "dotp": _dotp, "mmse": _mmse, "chest": _chest,
}
_DECODERS = {
    "matmul": _decode_matmul, "cmatmul": _decode_matmul, "cfft": cfft.decode_output,
    "conv2d": dl.decode_conv2d, "dotp": lambda prog, mem: np.int64(dl.decode_dotp(prog, mem)),
    "mmse": mmse.decode_output, "chest": chest.decode_output,
}

KERNELS = {
    k.name: k for k in (
        KernelSpec("matmul", "int", ("systolic", "baseline"), {"m": 64, "n": 64, "p": 64},
                   "int32 matrix multiply"),
        KernelSpec("cmatmul", "float", ("systolic", "baseline"), {"n_b": 8, "n_rx": 32, "n_sc": 256},
                   "beamforming: complex F16 matrix multiply with widening accumulation"),
        KernelSpec("cfft", "float", ("systolic", "baseline"), {"n_fft": 1024, "batch": 1},
                   "radix-4 complex F16 FFT"),
        KernelSpec("conv2d", "int", ("default",), {"h": 64, "w": 62, "k": 3}, "int32 2-D convolution"),
        KernelSpec("dotp", "int", ("default",), {"length": 16384}, "int32 dot product"),
        KernelSpec("mmse", "float", ("default",), {"n_b": 8, "n_tx": 8, "n_sc": 128, "n_rhs": 12, "sigma2": 0.0},
                   "per-subcarrier MMSE Cholesky solver"),
        KernelSpec("chest", "float", ("default",), {"n_b": 8, "n_tx": 8, "n_sc": 1024, "k0": 0, "k1": 256},
                   "DMRS least-squares channel estimation with comb interpolation"),
    )
}


def get_kernel(name: str) -> KernelSpec:
    try:
        return KERNELS[name]
    except KeyError:
        raise ConfigError(f"unknown kernel {name!r}; choose from {sorted(KERNELS)}") from None


def outputs_match(a, b) -> bool:
    """Bit-for-bit equality (NaN payloads included for complex outputs)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        return False
    if np.iscomplexobj(a) or np.iscomplexobj(b):
        a = np.ascontiguousarray(a, dtype=complex).view(np.float64)
        b = np.ascontiguousarray(b, dtype=complex).view(np.float64)
        return bool(np.array_equal(a, b, equal_nan=True))
    return bool(np.array_equal(a, b))
