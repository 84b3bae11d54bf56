"""Fused multiply-add processing element with accurate or approximate
normalization.

The PE multiplies two format operands exactly, aligns the product with an
extended-precision partial sum (double significand width, truncating
alignment), adds magnitudes and normalizes. No rounding happens inside the
PE; see :func:`approxnorm.systolic.south_round`.

Significand frames: a PE working width ``W = 2 * (man_bits + 1)`` holds a
``1.(W-1)`` fixed-point number, i.e. ``value = sig * 2**(exp - W + 1)``.
Raw adder outputs have ``W + 1`` bits; bit ``W`` is the carry.

Two implementations live here: scalar functions on Python ints that follow
the datapath stage by stage, and :func:`fma_batch`, a numpy version of the
same datapath used by the array simulator. The test-suite keeps them in
lockstep.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import numpy as np

from .formats import BF16, ExactDyadic, FloatFormat, FpClass, FpValue, bit_length_array

__all__ = [
    "NormMode", "ACCURATE", "PEConfig", "InternalSum", "MulStageOut", "NormTrace",
    "EffectiveOp", "multiply_stage", "align", "add_magnitudes", "leading_zeros",
    "normalize_accurate", "normalize_approx", "pe_fma",
    "SumArrays", "TraceArrays", "multiply_batch", "normalize_batch", "fma_batch",
]

_NORM_RE = re.compile(r"^an-(\d+)-(\d+)$")


@dataclass(frozen=True)
class NormMode:
    """``NormMode()`` is accurate (LZA) normalization, ``NormMode(k, lam)`` approximate."""

    k: int | None = None
    lam: int | None = None

    def __post_init__(self):
        if (self.k is None) != (self.lam is None):
            raise ValueError("approximate mode needs both k and lambda")
        if self.k is not None and (self.k < 1 or self.lam < 1):
            raise ValueError(f"k and lambda must be >= 1, got k={self.k} lambda={self.lam}")

    @property
    def accurate(self) -> bool:
        return self.k is None

    @property
    def shifts(self) -> tuple[int, ...]:
        """Left shifts the approximate normalizer can apply."""
        if self.accurate:
            raise ValueError("accurate mode has no fixed shift set")
        return (0, self.k, self.k + self.lam)

    @classmethod
    def parse(cls, text: str) -> "NormMode":
        text = text.strip().lower()
        if text == "accurate":
            return cls()
        m = _NORM_RE.match(text)
        if not m:
            raise ValueError(f"bad normalization spec {text!r}, expected 'accurate' or 'an-K-L'")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self):
        return "accurate" if self.accurate else f"an-{self.k}-{self.lam}"


ACCURATE = NormMode()


@dataclass(frozen=True)
class PEConfig:
    fmt: FloatFormat = BF16
    norm: NormMode = ACCURATE

    def __post_init__(self):
        if not self.norm.accurate and self.norm.k + self.norm.lam > self.acc_sig_bits:
            raise ValueError(f"k + lambda = {self.norm.k + self.norm.lam} exceeds the "
                             f"{self.acc_sig_bits}-bit accumulator")

    @property
    def acc_sig_bits(self) -> int:
        return 2 * self.fmt.precision

    @property
    def label(self) -> str:
        """Configuration name such as ``bf16`` or ``bf16an-1-2``."""
        return str(self.fmt) if self.norm.accurate else f"{self.fmt}{self.norm}"


class EffectiveOp(enum.Enum):
    ADD = "add"
    SUBTRACT = "subtract"


@dataclass(frozen=True)
class InternalSum:
    """Extended-precision partial sum flowing down a column.

    ``significand`` is a ``width``-bit ``1.(width-1)`` fixed-point number. In
    approximate mode its MSB may be zero (partially normalized).
    """

    cls: FpClass = FpClass.ZERO
    sign: int = 1
    exponent: int = 0
    significand: int = 0
    width: int = 16

    @classmethod
    def zero(cls, width: int = 16, sign: int = 1) -> "InternalSum":
        return cls(FpClass.ZERO, sign, 0, 0, width)

    @classmethod
    def from_value(cls, v: FpValue, width: int = 16) -> "InternalSum":
        """Widen a format value into the accumulator frame (exact)."""
        if v.cls is not FpClass.NORMAL:
            return cls(v.cls, v.sign, 0, 0, width)
        shift = width - v.significand.bit_length()
        if shift < 0:
            raise ValueError("significand wider than the accumulator")
        return cls(FpClass.NORMAL, v.sign, v.exponent, v.significand << shift, width)

    @property
    def normalized(self) -> bool:
        return self.cls is not FpClass.NORMAL or bool(self.significand >> (self.width - 1))

    def to_exact(self) -> ExactDyadic:
        if self.cls is FpClass.ZERO:
            return ExactDyadic(1, 0, 0)
        if self.cls is not FpClass.NORMAL:
            raise ValueError(f"cannot convert {self.cls.name} to an exact value")
        return ExactDyadic.make(self.sign * self.significand, self.exponent - self.width + 1)

    def __neg__(self) -> "InternalSum":
        if self.cls is FpClass.NAN:
            return self
        return InternalSum(self.cls, -self.sign, self.exponent, self.significand, self.width)


@dataclass(frozen=True)
class MulStageOut:
    cls: FpClass
    sign: int
    exponent: int
    significand: int
    width: int = 16


@dataclass(frozen=True)
class NormTrace:
    """One FMA's normalization record.

    ``accurate_shift`` is the leading-zero count of the ``W``-bit sum field
    (``W`` itself for an exactly-zero sum, 0 when the carry fired).
    ``applied_shift`` is the left shift the normalizer actually used.
    Special-value bypasses carry ``effective_op=None``.
    """

    effective_op: EffectiveOp | None
    exp_diff: int
    carry_right_shift: bool
    accurate_shift: int
    applied_shift: int
    unnormalized: bool
    width: int = 16

    @property
    def zero_sum(self) -> bool:
        return self.effective_op is not None and self.accurate_shift == self.width \
            and not self.carry_right_shift

    @property
    def special(self) -> bool:
        return self.effective_op is None

    @property
    def short_shift(self) -> bool:
        """Normalization fell short of the leading-zero count on a nonzero sum."""
        return (not self.special and not self.zero_sum and not self.carry_right_shift
                and self.applied_shift < self.accurate_shift)


def _special_trace(width: int) -> NormTrace:
    return NormTrace(None, 0, False, 0, 0, False, width)


def multiply_stage(a: FpValue, b: FpValue, cfg: PEConfig) -> MulStageOut:
    """Stage 1: exact significand product, brought into ``1.x`` form."""
    w = cfg.acc_sig_bits
    sign = a.sign * b.sign
    if a.cls is FpClass.NAN or b.cls is FpClass.NAN:
        return MulStageOut(FpClass.NAN, 1, 0, 0, w)
    if FpClass.INF in (a.cls, b.cls):
        if FpClass.ZERO in (a.cls, b.cls):
            return MulStageOut(FpClass.NAN, 1, 0, 0, w)
        return MulStageOut(FpClass.INF, sign, 0, 0, w)
    if FpClass.ZERO in (a.cls, b.cls):
        return MulStageOut(FpClass.ZERO, sign, 0, 0, w)
    prod = a.significand * b.significand
    # product of two 1.m numbers is in [1, 4): a 2.(W-2) fixed-point value
    exponent = a.exponent + b.exponent
    if prod >> (w - 1):
        exponent += 1
    else:
        prod <<= 1
    return MulStageOut(FpClass.NORMAL, sign, exponent, prod, w)


def align(p: MulStageOut, c: InternalSum, width: int | None = None) -> tuple[int, int, int]:
    """Right-shift the smaller-exponent operand; shifted-out bits are lost."""
    w = width or p.width
    if p.cls is FpClass.ZERO:
        return 0, c.significand, c.exponent
    if c.cls is FpClass.ZERO:
        return p.significand, 0, p.exponent
    common = max(p.exponent, c.exponent)
    dp, dc = common - p.exponent, common - c.exponent
    ap = p.significand >> dp if dp < w else 0
    ac = c.significand >> dc if dc < w else 0
    return ap, ac, common


def add_magnitudes(aligned_p: int, aligned_c: int, sign_p: int,
                   sign_c: int) -> tuple[int, int, EffectiveOp]:
    if sign_p == sign_c:
        return aligned_p + aligned_c, sign_p, EffectiveOp.ADD
    if aligned_p > aligned_c:
        return aligned_p - aligned_c, sign_p, EffectiveOp.SUBTRACT
    if aligned_c > aligned_p:
        return aligned_c - aligned_p, sign_c, EffectiveOp.SUBTRACT
    return 0, 1, EffectiveOp.SUBTRACT


def leading_zeros(x: int, width: int) -> int:
    return width - x.bit_length()


def _carry(raw_sum, sign, common_exp, width, op, exp_diff):
    s = InternalSum(FpClass.NORMAL, sign, common_exp + 1, raw_sum >> 1, width)
    return s, NormTrace(op, exp_diff, True, 0, 0, False, width)


def normalize_accurate(raw_sum: int, sign: int, common_exp: int, width: int = 16,
                       effective_op: EffectiveOp = EffectiveOp.ADD,
                       exp_diff: int = 0) -> tuple[InternalSum, NormTrace]:
    """Full normalization by the exact leading-zero count."""
    if raw_sum >> width:
        return _carry(raw_sum, sign, common_exp, width, effective_op, exp_diff)
    lz = leading_zeros(raw_sum, width)
    trace = NormTrace(effective_op, exp_diff, False, lz, lz, False, width)
    if raw_sum == 0:
        return InternalSum.zero(width, sign), trace
    return InternalSum(FpClass.NORMAL, sign, common_exp - lz, raw_sum << lz, width), trace


def normalize_approx(raw_sum: int, sign: int, common_exp: int, k: int, lam: int,
                     width: int = 16, effective_op: EffectiveOp = EffectiveOp.ADD,
                     exp_diff: int = 0) -> tuple[InternalSum, NormTrace]:
    """Normalize by 0, ``k`` or ``k + lam`` using two OR-reductions.

    The carry case is a separate exact right shift by one and is resolved
    before the OR checks look at the sum field.
    """
    if raw_sum >> width:
        return _carry(raw_sum, sign, common_exp, width, effective_op, exp_diff)
    if raw_sum >> (width - k):
        shift = 0
    elif raw_sum >> (width - k - lam):
        shift = k
    else:
        shift = k + lam
    lz = leading_zeros(raw_sum, width)
    if raw_sum == 0:
        return InternalSum.zero(width, sign), NormTrace(effective_op, exp_diff, False, lz,
                                                       shift, False, width)
    sig = (raw_sum << shift) & ((1 << width) - 1)
    unnormalized = not sig >> (width - 1)
    s = InternalSum(FpClass.NORMAL, sign, common_exp - shift, sig, width)
    return s, NormTrace(effective_op, exp_diff, False, lz, shift, unnormalized, width)


def pe_fma(a: FpValue, b: FpValue, c: InternalSum,
           cfg: PEConfig) -> tuple[InternalSum, NormTrace]:
    """``a * b + c`` through the PE datapath, without rounding."""
    w = cfg.acc_sig_bits
    p = multiply_stage(a, b, cfg)
    if p.cls is FpClass.NAN or c.cls is FpClass.NAN:
        return InternalSum(FpClass.NAN, 1, 0, 0, w), _special_trace(w)
    if p.cls is FpClass.INF or c.cls is FpClass.INF:
        if p.cls is FpClass.INF and c.cls is FpClass.INF and p.sign != c.sign:
            return InternalSum(FpClass.NAN, 1, 0, 0, w), _special_trace(w)
        sign = p.sign if p.cls is FpClass.INF else c.sign
        return InternalSum(FpClass.INF, sign, 0, 0, w), _special_trace(w)

    if p.cls is FpClass.ZERO and c.cls is FpClass.ZERO:
        sign = p.sign if p.sign == c.sign else 1
        return InternalSum.zero(w, sign), NormTrace(EffectiveOp.ADD, 0, False, w,
                                                    w if cfg.norm.accurate
                                                    else cfg.norm.k + cfg.norm.lam, False, w)
    if p.cls is FpClass.ZERO or c.cls is FpClass.ZERO:
        # a zero addend never subtracts: the other operand passes to the normalizer
        sign = c.sign if p.cls is FpClass.ZERO else p.sign
        ap, ac, common = align(p, c, w)
        raw, op, diff = ap + ac, EffectiveOp.ADD, 0
    else:
        ap, ac, common = align(p, c, w)
        raw, sign, op = add_magnitudes(ap, ac, p.sign, c.sign)
        diff = p.exponent - c.exponent
    if cfg.norm.accurate:
        return normalize_accurate(raw, sign, common, w, op, diff)
    return normalize_approx(raw, sign, common, cfg.norm.k, cfg.norm.lam, w, op, diff)


# ---------------------------------------------------------------------------
# Vectorized datapath

@dataclass
class SumArrays:
    """Batch of InternalSum values as parallel arrays."""

    cls: np.ndarray
    neg: np.ndarray
    exp: np.ndarray
    sig: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "SumArrays":
        return cls(np.zeros(shape, np.int8), np.zeros(shape, bool),
                   np.zeros(shape, np.int64), np.zeros(shape, np.int64))

    @classmethod
    def from_sums(cls, sums) -> "SumArrays":
        sums = list(sums)
        return cls(np.array([s.cls for s in sums], np.int8),
                   np.array([s.sign < 0 for s in sums], bool),
                   np.array([s.exponent for s in sums], np.int64),
                   np.array([s.significand for s in sums], np.int64))

    def item(self, idx, width: int) -> InternalSum:
        return InternalSum(FpClass(int(self.cls[idx])), -1 if self.neg[idx] else 1,
                           int(self.exp[idx]), int(self.sig[idx]), width)


@dataclass
class TraceArrays:
    """Batch of NormTrace records. ``special`` marks NaN/Inf bypasses."""

    subtract: np.ndarray
    exp_diff: np.ndarray
    carry: np.ndarray
    accurate_shift: np.ndarray
    applied_shift: np.ndarray
    unnormalized: np.ndarray
    special: np.ndarray
    zero: np.ndarray

    @property
    def short_shift(self) -> np.ndarray:
        return ~self.special & ~self.zero & ~self.carry & (self.applied_shift < self.accurate_shift)

    def item(self, idx, width: int) -> NormTrace:
        if self.special[idx]:
            return _special_trace(width)
        op = EffectiveOp.SUBTRACT if self.subtract[idx] else EffectiveOp.ADD
        return NormTrace(op, int(self.exp_diff[idx]), bool(self.carry[idx]),
                         int(self.accurate_shift[idx]), int(self.applied_shift[idx]),
                         bool(self.unnormalized[idx]), width)


def multiply_batch(a, b, width: int):
    """Vectorized :func:`multiply_stage` on decoded ``(cls, neg, exp, sig)`` arrays."""
    acls, aneg, aexp, asig = a
    bcls, bneg, bexp, bsig = b
    prod = asig * bsig
    hi = (prod >> (width - 1)).astype(bool)
    sig = np.where(hi, prod, prod << 1)
    exp = aexp + bexp + hi
    neg = aneg ^ bneg
    nan = (acls == FpClass.NAN) | (bcls == FpClass.NAN) | \
        ((acls == FpClass.INF) & (bcls == FpClass.ZERO)) | \
        ((acls == FpClass.ZERO) & (bcls == FpClass.INF))
    inf = ~nan & ((acls == FpClass.INF) | (bcls == FpClass.INF))
    zero = ~nan & ~inf & ((acls == FpClass.ZERO) | (bcls == FpClass.ZERO))
    cls = np.where(nan, FpClass.NAN, np.where(inf, FpClass.INF,
                   np.where(zero, FpClass.ZERO, FpClass.NORMAL))).astype(np.int8)
    normal = cls == FpClass.NORMAL
    return cls, neg & (cls != FpClass.NAN), np.where(normal, exp, 0), np.where(normal, sig, 0)


def normalize_batch(raw, width: int, mode: NormMode):
    """Left shift chosen by the normalizer for ``W``-bit sums (no carry).

    Returns ``(applied_shift, leading_zero_count)``.
    """
    raw = np.asarray(raw, dtype=np.int64)
    lz = width - bit_length_array(raw)
    if mode.accurate:
        return lz, lz
    k, lam = mode.k, mode.lam
    shift = np.where(raw >> (width - k) != 0, 0,
                     np.where(raw >> (width - k - lam) != 0, k, k + lam))
    return shift, lz


def fma_batch(a, b, c: SumArrays, cfg: PEConfig) -> tuple[SumArrays, TraceArrays]:
    """Vectorized :func:`pe_fma` over broadcast-compatible operand arrays."""
    w = cfg.acc_sig_bits
    pcls, pneg, pexp, psig = multiply_batch(a, b, w)
    shape = np.broadcast_shapes(pcls.shape, c.cls.shape)
    pcls, pneg, pexp, psig = (np.broadcast_to(x, shape) for x in (pcls, pneg, pexp, psig))
    ccls, cneg, cexp, csig = (np.broadcast_to(x, shape) for x in (c.cls, c.neg, c.exp, c.sig))

    nan = (pcls == FpClass.NAN) | (ccls == FpClass.NAN) | \
        ((pcls == FpClass.INF) & (ccls == FpClass.INF) & (pneg != cneg))
    inf = ~nan & ((pcls == FpClass.INF) | (ccls == FpClass.INF))
    special = nan | inf
    pz = pcls == FpClass.ZERO
    cz = ccls == FpClass.ZERO

    # zero operands take the other operand's exponent and never subtract
    pexp = np.where(pz, cexp, pexp)
    cexp = np.where(cz, pexp, cexp)
    diff = np.where(pz | cz, 0, pexp - cexp)
    common = np.maximum(pexp, cexp)
    dp = np.minimum(common - pexp, 63)
    dc = np.minimum(common - cexp, 63)
    ap = np.where(dp < w, psig >> dp, 0)
    ac = np.where(dc < w, csig >> dc, 0)

    sub = (pneg != cneg) & ~pz & ~cz
    raw = np.where(sub, np.abs(ap - ac), ap + ac)
    neg = np.where(sub, np.where(ap > ac, pneg, np.where(ac > ap, cneg, False)),
                   np.where(pz, cneg, pneg))
    neg = np.where(pz & cz, pneg & cneg, neg)

    carry = (raw >> w).astype(bool)
    field = np.where(carry, 0, raw)
    shift, lz = normalize_batch(field, w, cfg.norm)
    zero = ~carry & (field == 0)
    shift = np.where(carry, 0, shift)
    lz = np.where(carry, 0, lz)
    sig = np.where(carry, raw >> 1, (field << shift) & ((1 << w) - 1))
    exp = np.where(carry, common + 1, common - shift)
    unnorm = ~zero & ~carry & ((sig >> (w - 1)) == 0)

    cls = np.where(nan, FpClass.NAN, np.where(inf, FpClass.INF,
                   np.where(zero, FpClass.ZERO, FpClass.NORMAL))).astype(np.int8)
    inf_neg = np.where(pcls == FpClass.INF, pneg, cneg)
    out_neg = np.where(nan, False, np.where(inf, inf_neg, neg))
    regular = cls == FpClass.NORMAL
    out = SumArrays(cls, out_neg, np.where(regular, exp, 0), np.where(regular, sig, 0))
    trace = TraceArrays(
        subtract=sub & ~special, exp_diff=np.where(special, 0, diff),
        carry=carry & ~special,
        accurate_shift=np.where(special, 0, lz), applied_shift=np.where(special, 0, shift),
        unnormalized=unnorm & ~special, special=special, zero=zero & ~special)
    return out, trace
