"""Bit-accurate binary16 / binary32 arithmetic for the simulated cores.

Two views of the same arithmetic live here:

* scalar functions operating on raw bit patterns and Python floats, used by
  the cycle engine one micro-op at a time;
* ``*_v`` array functions operating on numpy arrays, used by the functional
  kernel references and the link-level simulator.

Both follow one rounding chain, so they agree bit for bit (see the tests).

Conventions
-----------
* F16 values travel as ``int`` bit patterns (0..0xFFFF).
* C16 values travel as one packed 32-bit word: real part in the low half,
  imaginary part in the high half.
* F32 values travel as Python floats that are exactly representable in
  binary32. C32 (the widening accumulator) is a ``(re, im)`` tuple of those.
* Rounding is round-to-nearest-even everywhere. NaNs are canonical quiet NaNs.
"""

from __future__ import annotations

import math
import struct

import numpy as np

F16_QNAN = 0x7E00
F16_PINF = 0x7C00
F16_NINF = 0xFC00
F16_MAX = 65504.0
F32_QNAN_BITS = 0x7FC00000

# Smallest magnitude that rounds to infinity in binary32: max finite + half ulp.
_F32_OVERFLOW = (2.0 - 2.0 ** -24) * 2.0 ** 127

_pack_f = struct.Struct("<f").pack
_unpack_f = struct.Struct("<f").unpack
_pack_I = struct.Struct("<I").pack
_unpack_I = struct.Struct("<I").unpack


# ---------------------------------------------------------------------------
# binary16
# ---------------------------------------------------------------------------
def f16_round(x: float) -> int:
    """Round a real value to the nearest binary16 bit pattern (RNE)."""
    if x != x:
        return F16_QNAN
    sign = 0x8000 if math.copysign(1.0, x) < 0 else 0
    a = abs(x)
    if a == 0.0:
        return sign
    if a == math.inf:
        return sign | 0x7C00
    _, e = math.frexp(a)  # a = m * 2**e, m in [0.5, 1)
    exp = max(e - 1, -14)  # unbiased exponent, clamped to the subnormal range
    quantum = math.ldexp(1.0, exp - 10)
    n = round(a / quantum)  # exact scaling; round() is half-to-even
    if n == 2048:  # carried into the next binade
        n = 1024
        exp += 1
    if exp > 15:
        return sign | 0x7C00
    if n < 1024:  # subnormal (exp is pinned at -14)
        return sign | n
    return sign | ((exp + 15) << 10) | (n - 1024)


def f16_to_float(bits: int) -> float:
    """Decode a binary16 bit pattern to a Python float."""
    sign = -1.0 if bits & 0x8000 else 1.0
    e = (bits >> 10) & 0x1F
    f = bits & 0x3FF
    if e == 0x1F:
        return sign * math.inf if f == 0 else math.nan
    if e == 0:
        return sign * math.ldexp(f, -24)
    return sign * math.ldexp(f | 0x400, e - 25)


F16_VALUES: list[float] = [f16_to_float(b) for b in range(1 << 16)]


def f16_canonical(bits: int) -> int:
    if (bits & 0x7C00) == 0x7C00 and bits & 0x3FF:
        return F16_QNAN
    return bits


def f16_add(a: int, b: int) -> int:
    return f16_round(fround32(F16_VALUES[a] + F16_VALUES[b]))


def f16_mul(a: int, b: int) -> int:
    # The product of two binary16 values is exact in binary32 (and binary64).
    return f16_round(F16_VALUES[a] * F16_VALUES[b])


# ---------------------------------------------------------------------------
# binary32
# ---------------------------------------------------------------------------
def fround32(x: float) -> float:
    """Round a Python float to the nearest binary32 value (RNE)."""
    try:
        return _unpack_f(_pack_f(x))[0]
    except OverflowError:
        return math.copysign(math.inf, x) if abs(x) >= _F32_OVERFLOW else math.copysign(3.4028234663852886e38, x)


def f32_bits(x: float) -> int:
    if x != x:
        return F32_QNAN_BITS
    return _unpack_I(_pack_f(x))[0]


def f32_from_bits(bits: int) -> float:
    return _unpack_f(_pack_I(bits & 0xFFFFFFFF))[0]


def as_f32(v) -> float:
    """Interpret a register value as a binary32 scalar.

    Loaded words arrive as raw bit patterns; C32 accumulators expose their
    real lane.
    """
    if isinstance(v, float):
        return v
    if isinstance(v, tuple):
        return v[0]
    return f32_from_bits(v)


def fadd3(a: float, b: float, c: float) -> float:
    """Three-term add evaluated as ``(a + b) + c`` with two RNE roundings."""
    return fround32(fround32(a + b) + c)


def fdiv(a: float, b: float) -> float:
    if b == 0.0:
        if a != a or a == 0.0:
            return math.nan
        return math.copysign(math.inf, a) * math.copysign(1.0, b)
    # binary64 division then binary32 rounding is innocuous double rounding.
    return fround32(a / b)


def fsqrt(a: float) -> float:
    if a != a or a < 0.0:
        return math.nan
    if a == math.inf:
        return a
    return fround32(math.sqrt(a))


# ---------------------------------------------------------------------------
# complex 16-bit (one SIMD lane pair)
# ---------------------------------------------------------------------------
def c16_pack(re_bits: int, im_bits: int) -> int:
    return (re_bits & 0xFFFF) | ((im_bits & 0xFFFF) << 16)


def c16_unpack(word: int) -> tuple[int, int]:
    return word & 0xFFFF, (word >> 16) & 0xFFFF


def c16_from_complex(z: complex) -> int:
    return c16_pack(f16_round(z.real), f16_round(z.imag))


def c16_to_complex(word: int) -> complex:
    return complex(F16_VALUES[word & 0xFFFF], F16_VALUES[(word >> 16) & 0xFFFF])


def _c16_out(re: float, im: float) -> int:
    # F32 result of the internal datapath, then one rounding to F16 per lane.
    return f16_round(fround32(re)) | (f16_round(fround32(im)) << 16)


def cmul16(a: int, b: int, conj_b: bool = False) -> int:
    """Complex multiply: exact F32 products, one F32 rounding per sum, then F16."""
    ar, ai = F16_VALUES[a & 0xFFFF], F16_VALUES[a >> 16]
    br, bi = F16_VALUES[b & 0xFFFF], F16_VALUES[b >> 16]
    if conj_b:
        bi = -bi
    return _c16_out(ar * br - ai * bi, ar * bi + ai * br)


def cadd16(a: int, b: int) -> int:
    return _c16_out(F16_VALUES[a & 0xFFFF] + F16_VALUES[b & 0xFFFF],
                    F16_VALUES[a >> 16] + F16_VALUES[b >> 16])


def csub16(a: int, b: int) -> int:
    return _c16_out(F16_VALUES[a & 0xFFFF] - F16_VALUES[b & 0xFFFF],
                    F16_VALUES[a >> 16] - F16_VALUES[b >> 16])


def caddj16(a: int, b: int) -> int:
    """a + j*b"""
    return _c16_out(F16_VALUES[a & 0xFFFF] - F16_VALUES[b >> 16],
                    F16_VALUES[a >> 16] + F16_VALUES[b & 0xFFFF])


def csubj16(a: int, b: int) -> int:
    """a - j*b"""
    return _c16_out(F16_VALUES[a & 0xFFFF] + F16_VALUES[b >> 16],
                    F16_VALUES[a >> 16] - F16_VALUES[b & 0xFFFF])


# ---------------------------------------------------------------------------
# widening accumulation (C16 x C16 -> C32)
# ---------------------------------------------------------------------------
C32_ZERO = (0.0, 0.0)


def cmac_widening(acc: tuple[float, float], a: int, b: int, conj_a: bool = False) -> tuple[float, float]:
    """``acc + a*b`` with exact F32 products and an F32 rounding per addition.

    Accumulation order: real lane adds ``ar*br`` then subtracts ``ai*bi``;
    imaginary lane adds ``ar*bi`` then ``ai*br``.
    """
    ar, ai = F16_VALUES[a & 0xFFFF], F16_VALUES[a >> 16]
    br, bi = F16_VALUES[b & 0xFFFF], F16_VALUES[b >> 16]
    if conj_a:
        ai = -ai
    re = fround32(fround32(acc[0] + ar * br) - ai * bi)
    im = fround32(fround32(acc[1] + ar * bi) + ai * br)
    return re, im


def dotp_widening(a, b) -> tuple[float, float]:
    """Left-to-right fold of :func:`cmac_widening` from a zero accumulator."""
    if len(a) != len(b):
        raise ValueError("dotp_widening needs equal-length operands")
    acc = C32_ZERO
    for x, y in zip(a, b):
        acc = cmac_widening(acc, x, y)
    return acc


def c32_pack16(acc: tuple[float, float]) -> int:
    """Round a C32 accumulator to a packed C16 word."""
    return f16_round(acc[0]) | (f16_round(acc[1]) << 16)


def c16_widen(word: int) -> tuple[float, float]:
    return F16_VALUES[word & 0xFFFF], F16_VALUES[word >> 16]


# ---------------------------------------------------------------------------
# complex binary32 helpers used by the MMSE solver
# ---------------------------------------------------------------------------
def cmac32(acc, a, b, conj_b: bool = False, negate: bool = False):
    """``acc +/- a*b`` on C32 values; each product and each addition rounds to F32."""
    ar, ai = a
    br, bi = b
    if conj_b:
        bi = -bi
    prr = fround32(ar * br)
    pii = fround32(ai * bi)
    pri = fround32(ar * bi)
    pir = fround32(ai * br)
    if negate:
        re = fround32(fround32(acc[0] - prr) + pii)
        im = fround32(fround32(acc[1] - pri) - pir)
    else:
        re = fround32(fround32(acc[0] + prr) - pii)
        im = fround32(fround32(acc[1] + pri) + pir)
    return re, im


def cscale32(a, s: float):
    return fround32(a[0] * s), fround32(a[1] * s)


# ---------------------------------------------------------------------------
# array counterparts
# ---------------------------------------------------------------------------
def r32_v(x):
    """Round a float64 array (or scalar) to binary32 values, kept as float64."""
    with np.errstate(over="ignore", invalid="ignore"):
        return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float64)


def r16_v(x):
    """Round binary32-exact values to binary16, kept as float64."""
    with np.errstate(over="ignore", invalid="ignore"):
        return np.asarray(x, dtype=np.float64).astype(np.float32).astype(np.float16).astype(np.float64)


def c16_v(z):
    """Quantise complex values to C16 (each lane rounded to F32 then F16)."""
    z = np.asarray(z, dtype=np.complex128)
    return r16_v(z.real) + 1j * r16_v(z.imag)


def c32_v(z):
    z = np.asarray(z, dtype=np.complex128)
    return r32_v(z.real) + 1j * r32_v(z.imag)


def _c16_out_v(re, im):
    return r16_v(r32_v(re)) + 1j * r16_v(r32_v(im))


def cmul16_v(a, b, conj_b: bool = False):
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    if conj_b:
        bi = -bi
    return _c16_out_v(ar * br - ai * bi, ar * bi + ai * br)


def cadd16_v(a, b):
    return _c16_out_v(a.real + b.real, a.imag + b.imag)


def csub16_v(a, b):
    return _c16_out_v(a.real - b.real, a.imag - b.imag)


def caddj16_v(a, b):
    return _c16_out_v(a.real - b.imag, a.imag + b.real)


def csubj16_v(a, b):
    return _c16_out_v(a.real + b.imag, a.imag - b.real)


def cmac_widening_v(acc, a, b, conj_a: bool = False):
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    if conj_a:
        ai = -ai
    re = r32_v(r32_v(acc.real + ar * br) - ai * bi)
    im = r32_v(r32_v(acc.imag + ar * bi) + ai * br)
    return re + 1j * im


def cmac32_v(acc, a, b, conj_b: bool = False, negate: bool = False):
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    if conj_b:
        bi = -bi
    prr, pii, pri, pir = r32_v(ar * br), r32_v(ai * bi), r32_v(ar * bi), r32_v(ai * br)
    if negate:
        re = r32_v(r32_v(acc.real - prr) + pii)
        im = r32_v(r32_v(acc.imag - pri) - pir)
    else:
        re = r32_v(r32_v(acc.real + prr) - pii)
        im = r32_v(r32_v(acc.imag + pri) + pir)
    return re + 1j * im


def cscale32_v(a, s):
    return r32_v(a.real * s) + 1j * r32_v(a.imag * s)


def fdiv_v(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return r32_v(np.asarray(a, dtype=np.float64) / b)


def fsqrt_v(a):
    with np.errstate(invalid="ignore"):
        return r32_v(np.sqrt(np.asarray(a, dtype=np.float64)))


def c32_pack16_v(acc):
    return r16_v(acc.real) + 1j * r16_v(acc.imag)


def c16_words_v(z) -> np.ndarray:
    """Pack C16-exact complex values into uint32 memory words."""
    z = np.asarray(z)
    re = z.real.astype(np.float16).view(np.uint16).astype(np.uint32)
    im = z.imag.astype(np.float16).view(np.uint16).astype(np.uint32)
    return re | (im << 16)


def c16_from_words_v(words) -> np.ndarray:
    w = np.asarray(words, dtype=np.uint32)
    re = (w & 0xFFFF).astype(np.uint16).view(np.float16).astype(np.float64)
    im = (w >> 16).astype(np.uint16).view(np.float16).astype(np.float64)
    return re + 1j * im
