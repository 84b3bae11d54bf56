"""Parametric floating-point formats, bit-level encode/decode and an exact
dyadic-rational oracle.

Subnormal encodings are flushed to zero on both decode and encode, rounding
is always round-to-nearest-even, and exponent overflow produces infinity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "FloatFormat", "FpClass", "FpValue", "ExactDyadic",
    "FP32", "BF16", "E4M3", "E5M2", "PRESETS", "parse_format",
    "decode", "encode", "to_exact", "exact_dot", "round_exact",
    "round_fraction", "from_float", "to_float",
    "decode_array", "encode_array", "quantize_array", "bits_to_float_array",
]


@dataclass(frozen=True)
class FloatFormat:
    exp_bits: int
    man_bits: int
    name: str = ""

    def __post_init__(self):
        if self.exp_bits < 2 or self.man_bits < 1:
            raise ValueError(f"invalid format widths e={self.exp_bits} m={self.man_bits}")
        if self.total_bits > 32:
            raise ValueError(f"formats wider than 32 bits are not supported ({self.total_bits})")

    @property
    def bias(self) -> int:
        return (1 << (self.exp_bits - 1)) - 1

    @property
    def total_bits(self) -> int:
        return 1 + self.exp_bits + self.man_bits

    @property
    def precision(self) -> int:
        """Significand width including the hidden bit."""
        return self.man_bits + 1

    @property
    def max_biased(self) -> int:
        return (1 << self.exp_bits) - 1

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        return self.max_biased - 1 - self.bias

    @property
    def qnan_bits(self) -> int:
        return (self.max_biased << self.man_bits) | (1 << (self.man_bits - 1))

    def inf_bits(self, negative: bool = False) -> int:
        return (int(negative) << (self.total_bits - 1)) | (self.max_biased << self.man_bits)

    def __str__(self):
        return self.name or f"custom:{self.exp_bits},{self.man_bits}"


FP32 = FloatFormat(8, 23, "fp32")
BF16 = FloatFormat(8, 7, "bf16")
E4M3 = FloatFormat(4, 3, "e4m3")
E5M2 = FloatFormat(5, 2, "e5m2")
PRESETS = {f.name: f for f in (FP32, BF16, E4M3, E5M2)}


def parse_format(text: str) -> FloatFormat:
    """Parse a preset name (``bf16``) or ``custom:E,M``."""
    key = text.strip().lower()
    if key in PRESETS:
        return PRESETS[key]
    if key.startswith("custom:"):
        try:
            e, m = (int(t) for t in key[len("custom:"):].split(","))
        except ValueError:
            raise ValueError(f"bad custom format {text!r}, expected custom:E,M") from None
        return FloatFormat(e, m)
    raise ValueError(f"unknown format {text!r}")


class FpClass(enum.IntEnum):
    ZERO = 0
    NORMAL = 1
    INF = 2
    NAN = 3


@dataclass(frozen=True)
class FpValue:
    """A decoded number.

    For ``NORMAL`` values the significand carries an explicit leading one at
    bit ``significand.bit_length() - 1`` and the value is
    ``sign * significand * 2**(exponent - significand.bit_length() + 1)``.
    Decoded values always have ``man_bits + 1`` significand bits; wider
    significands are allowed and get rounded by :func:`encode`.
    """

    cls: FpClass
    sign: int = 1
    exponent: int = 0
    significand: int = 0

    @classmethod
    def zero(cls, sign: int = 1) -> "FpValue":
        return cls(FpClass.ZERO, sign)

    @classmethod
    def inf(cls, sign: int = 1) -> "FpValue":
        return cls(FpClass.INF, sign)

    @classmethod
    def nan(cls) -> "FpValue":
        return cls(FpClass.NAN, 1)

    @classmethod
    def normal(cls, sign: int, exponent: int, significand: int) -> "FpValue":
        if significand <= 0:
            raise ValueError("normal significand must be positive")
        return cls(FpClass.NORMAL, sign, exponent, significand)

    def __neg__(self) -> "FpValue":
        if self.cls is FpClass.NAN:
            return self
        return FpValue(self.cls, -self.sign, self.exponent, self.significand)


@dataclass(frozen=True)
class ExactDyadic:
    """``sign * mantissa * 2**scale`` in canonical form (odd or zero mantissa)."""

    sign: int
    mantissa: int
    scale: int

    def __post_init__(self):
        if self.mantissa < 0:
            raise ValueError("mantissa must be non-negative")

    @classmethod
    def make(cls, value: int, scale: int = 0) -> "ExactDyadic":
        """Build from a signed integer times ``2**scale`` and canonicalize."""
        if value == 0:
            return cls(1, 0, 0)
        sign = -1 if value < 0 else 1
        m = abs(value)
        tz = (m & -m).bit_length() - 1
        return cls(sign, m >> tz, scale + tz)

    @property
    def numerator(self) -> int:
        """Signed integer part ``sign * mantissa``."""
        return self.sign * self.mantissa

    def __add__(self, other: "ExactDyadic") -> "ExactDyadic":
        s = min(self.scale, other.scale)
        return ExactDyadic.make((self.numerator << (self.scale - s))
                                + (other.numerator << (other.scale - s)), s)

    def __mul__(self, other: "ExactDyadic") -> "ExactDyadic":
        return ExactDyadic.make(self.numerator * other.numerator, self.scale + other.scale)

    def __neg__(self) -> "ExactDyadic":
        return ExactDyadic.make(-self.numerator, self.scale)

    def to_fraction(self) -> Fraction:
        return Fraction(self.numerator) * Fraction(2) ** self.scale

    def __float__(self):
        if self.mantissa.bit_length() <= 53:
            return math.ldexp(float(self.numerator), self.scale)
        return float(self.to_fraction())


def decode(bits: int, fmt: FloatFormat) -> FpValue:
    if not 0 <= bits < (1 << fmt.total_bits):
        raise ValueError(f"bit pattern {bits:#x} does not fit {fmt}")
    sign = -1 if bits >> (fmt.total_bits - 1) else 1
    biased = (bits >> fmt.man_bits) & fmt.max_biased
    man = bits & ((1 << fmt.man_bits) - 1)
    if biased == fmt.max_biased:
        return FpValue.nan() if man else FpValue.inf(sign)
    if biased == 0:
        # subnormals flush to zero
        return FpValue.zero(sign)
    return FpValue(FpClass.NORMAL, sign, biased - fmt.bias, (1 << fmt.man_bits) | man)


def _pack(negative: bool, exponent: int, sig: int, fmt: FloatFormat) -> int:
    """Pack a rounded ``precision``-bit significand with range checks."""
    biased = exponent + fmt.bias
    sign_bit = int(negative) << (fmt.total_bits - 1)
    if biased >= fmt.max_biased:
        return fmt.inf_bits(negative)
    if biased < 1:
        return sign_bit
    return sign_bit | (biased << fmt.man_bits) | (sig & ((1 << fmt.man_bits) - 1))


def _rne_shift(sig: int, drop: int) -> int:
    """Shift ``sig`` right by ``drop`` bits, rounding to nearest even."""
    if drop <= 0:
        return sig << -drop
    q = sig >> drop
    rem = sig & ((1 << drop) - 1)
    half = 1 << (drop - 1)
    if rem > half or (rem == half and q & 1):
        q += 1
    return q


def encode(v: FpValue, fmt: FloatFormat) -> int:
    if v.cls is FpClass.NAN:
        return fmt.qnan_bits
    negative = v.sign < 0
    if v.cls is FpClass.INF:
        return fmt.inf_bits(negative)
    if v.cls is FpClass.ZERO:
        return int(negative) << (fmt.total_bits - 1)
    width = v.significand.bit_length()
    sig = _rne_shift(v.significand, width - fmt.precision)
    exponent = v.exponent
    if sig >> fmt.precision:
        sig >>= 1
        exponent += 1
    return _pack(negative, exponent, sig, fmt)


def to_exact(v: FpValue) -> ExactDyadic:
    if v.cls is FpClass.ZERO:
        return ExactDyadic(1, 0, 0)
    if v.cls is not FpClass.NORMAL:
        raise ValueError(f"cannot convert {v.cls.name} to an exact value")
    return ExactDyadic.make(v.sign * v.significand,
                            v.exponent - v.significand.bit_length() + 1)


def exact_dot(a: Sequence[FpValue], b: Sequence[FpValue]) -> ExactDyadic:
    """Exact sum of pairwise products, no intermediate rounding."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    terms = [to_exact(x) * to_exact(y) for x, y in zip(a, b)]
    if not terms:
        return ExactDyadic(1, 0, 0)
    base = min(t.scale for t in terms)
    return ExactDyadic.make(sum(t.numerator << (t.scale - base) for t in terms), base)


def round_exact(x: ExactDyadic, fmt: FloatFormat) -> FpValue:
    """Round an exact value to ``fmt`` (RNE, overflow to Inf, flush underflow)."""
    if x.mantissa == 0:
        return FpValue.zero(x.sign)
    return decode(encode(FpValue.normal(x.sign, x.scale + x.mantissa.bit_length() - 1,
                                        x.mantissa), fmt), fmt)


def round_fraction(q: Fraction, fmt: FloatFormat) -> int:
    """Round an arbitrary rational to ``fmt`` bits (RNE, overflow to Inf, FTZ)."""
    if q == 0:
        return 0
    negative = q < 0
    num, den = abs(q.numerator), q.denominator
    # exponent e with 2**e <= |q| < 2**(e+1)
    e = num.bit_length() - den.bit_length()
    if (num << max(0, -e)) < (den << max(0, e)):
        e -= 1
    shift = fmt.precision - 1 - e
    scaled_num = num << shift if shift >= 0 else num
    scaled_den = den if shift >= 0 else den << -shift
    sig, rem = divmod(scaled_num, scaled_den)
    if 2 * rem > scaled_den or (2 * rem == scaled_den and sig & 1):
        sig += 1
    if sig >> fmt.precision:
        sig >>= 1
        e += 1
    return _pack(negative, e, sig, fmt)


def from_float(x: float, fmt: FloatFormat) -> int:
    """Round a Python float to ``fmt`` bits."""
    if math.isnan(x):
        return fmt.qnan_bits
    if math.isinf(x):
        return fmt.inf_bits(x < 0)
    if x == 0:
        return int(math.copysign(1.0, x) < 0) << (fmt.total_bits - 1)
    return round_fraction(Fraction(x), fmt)


def to_float(bits: int, fmt: FloatFormat) -> float:
    v = decode(bits, fmt)
    if v.cls is FpClass.NAN:
        return math.nan
    if v.cls is FpClass.INF:
        return math.copysign(math.inf, v.sign)
    if v.cls is FpClass.ZERO:
        return math.copysign(0.0, v.sign)
    return math.ldexp(v.sign * v.significand, v.exponent - fmt.man_bits)


# ---------------------------------------------------------------------------
# Vectorized counterparts.  Arrays of bit patterns use int64; decoded arrays
# are (cls, neg, exp, sig) with the same conventions as FpValue.

def decode_array(bits, fmt: FloatFormat):
    """Decode an array of bit patterns into ``(cls, neg, exp, sig)`` arrays."""
    bits = np.asarray(bits, dtype=np.int64)
    if bits.size and (bits.min() < 0 or bits.max() >= (1 << fmt.total_bits)):
        raise ValueError(f"bit pattern out of range for {fmt}")
    neg = (bits >> (fmt.total_bits - 1)).astype(bool)
    biased = (bits >> fmt.man_bits) & fmt.max_biased
    man = bits & ((1 << fmt.man_bits) - 1)
    cls = np.full(bits.shape, FpClass.NORMAL, dtype=np.int8)
    cls[biased == 0] = FpClass.ZERO
    top = biased == fmt.max_biased
    cls[top & (man == 0)] = FpClass.INF
    cls[top & (man != 0)] = FpClass.NAN
    normal = cls == FpClass.NORMAL
    exp = np.where(normal, biased - fmt.bias, 0)
    sig = np.where(normal, man | (1 << fmt.man_bits), 0)
    neg = neg & (cls != FpClass.NAN)
    return cls, neg, exp.astype(np.int64), sig.astype(np.int64)


def bit_length_array(x):
    """Bit length of non-negative int64 values below 2**53."""
    x = np.asarray(x, dtype=np.int64)
    return np.frexp(x.astype(np.float64))[1].astype(np.int64)


def encode_array(cls, neg, exp, sig, width: int, fmt: FloatFormat):
    """Round and pack arrays whose normal significands have MSB at ``width - 1``.

    Significands need not be normalized; a leading-zero count is applied
    first. Returns int64 bit patterns.
    """
    cls = np.asarray(cls)
    neg = np.asarray(neg, dtype=bool)
    exp = np.asarray(exp, dtype=np.int64)
    sig = np.asarray(sig, dtype=np.int64)
    normal = (cls == FpClass.NORMAL) & (sig != 0)
    lz = np.where(normal, width - bit_length_array(sig), 0)
    sig = np.where(normal, sig << lz, 0)
    exp = exp - lz
    drop = width - fmt.precision
    if drop > 0:
        q = sig >> drop
        rem = sig & ((1 << drop) - 1)
        half = 1 << (drop - 1)
        q = q + ((rem > half) | ((rem == half) & (q & 1).astype(bool)))
    else:
        q = sig << -drop
    carry = q >> fmt.precision
    q = q >> carry
    exp = exp + carry
    biased = exp + fmt.bias
    sign_bits = neg.astype(np.int64) << (fmt.total_bits - 1)
    out = sign_bits | (np.clip(biased, 0, fmt.max_biased) << fmt.man_bits) \
        | (q & ((1 << fmt.man_bits) - 1))
    out = np.where(biased >= fmt.max_biased, sign_bits | (fmt.max_biased << fmt.man_bits), out)
    out = np.where(biased < 1, sign_bits, out)
    out = np.where(normal, out, sign_bits)
    out = np.where(cls == FpClass.INF, sign_bits | (fmt.max_biased << fmt.man_bits), out)
    out = np.where(cls == FpClass.NAN, fmt.qnan_bits, out)
    return out.astype(np.int64)


def quantize_array(x, fmt: FloatFormat):
    """Round float64 values to ``fmt`` bit patterns (RNE, exact from the double)."""
    x = np.asarray(x, dtype=np.float64)
    finite = np.isfinite(x)
    m, e = np.frexp(np.where(finite, np.abs(x), 0.0))
    sig = np.ldexp(m, 53).astype(np.int64)  # exact: 53-bit integer
    cls = np.where(np.isnan(x), FpClass.NAN,
                   np.where(~finite, FpClass.INF,
                            np.where(x == 0, FpClass.ZERO, FpClass.NORMAL))).astype(np.int8)
    sig = np.where(cls == FpClass.NORMAL, sig, 0)
    return encode_array(cls, np.signbit(x), (e - 1).astype(np.int64), sig, 53, fmt)


def bits_to_float_array(bits, fmt: FloatFormat):
    """Decode bit patterns to float64 (exact for every supported format)."""
    cls, neg, exp, sig = decode_array(bits, fmt)
    val = np.ldexp(sig.astype(np.float64), (exp - fmt.man_bits).astype(np.int32))
    val = np.where(cls == FpClass.INF, np.inf, val)
    val = np.where(cls == FpClass.NAN, np.nan, val)
    return np.where(neg, -val, val)
