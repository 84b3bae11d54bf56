"""Exhaustive property checks and an exact-arithmetic replay oracle.

The replay oracle restates the accurate PE in value terms: operands are
exact dyadic rationals, alignment truncates toward zero onto the grid of the
larger operand's last significand bit, and a carry-out truncates once more
onto the next coarser grid. It never manipulates significand frames, so it
checks the bit-level datapath from a different direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .formats import BF16, FloatFormat, FpClass, FpValue, bit_length_array, to_exact
from .pe import (InternalSum, NormMode, PEConfig, SumArrays, fma_batch, normalize_accurate,
                 normalize_approx, pe_fma)

__all__ = ["Violation", "check_shift_dominance", "replay_accurate_fma",
           "replay_accurate_batch", "AccurateSweep", "accurate_sweep_domain",
           "check_accurate_sweep"]


@dataclass(frozen=True)
class Violation:
    check: str
    detail: str


def check_shift_dominance(width: int = 16, ks=(1, 2, 3), lams=(1, 2, 3),
                          limit: int = 20) -> list[Violation]:
    """Every ``width + 1``-bit raw sum against every ``(k, λ)``.

    Applied shifts must come from ``{0, k, k+λ}``, never exceed the
    leading-zero count and match it exactly when it lies in that set.
    """
    out: list[Violation] = []
    for raw in range(1 << (width + 1)):
        ref, rt = normalize_accurate(raw, 1, 0, width)
        for k in ks:
            for lam in lams:
                if k + lam > width:
                    continue
                s, t = normalize_approx(raw, 1, 0, k, lam, width)
                need = rt.accurate_shift
                ok = (t.applied_shift in (0, k, k + lam)
                      and t.applied_shift <= need
                      and (t.applied_shift == need) == (need in (0, k, k + lam))
                      and t.accurate_shift == need
                      and t.carry_right_shift == rt.carry_right_shift)
                # a set MSB is never shifted out
                if ok and raw and not t.carry_right_shift:
                    ok = s.significand == raw << t.applied_shift
                    ok = ok and (not s.significand >> (width - 1)) == t.unnormalized
                if not ok:
                    out.append(Violation("shift-dominance",
                                         f"raw={raw:#0{(width + 1 + 3) // 4 + 2}x} k={k} "
                                         f"lambda={lam} applied={t.applied_shift} "
                                         f"needed={need}"))
                    if len(out) >= limit:
                        return out
    return out


def _floor_log2(x: Fraction) -> int:
    e = x.numerator.bit_length() - x.denominator.bit_length()
    if Fraction(2) ** e > x:
        e -= 1
    return e


def _trunc(x: Fraction, unit: Fraction) -> Fraction:
    q = abs(x) // unit
    return q * unit if x >= 0 else -q * unit


def replay_accurate_fma(a: FpValue, b: FpValue, c: Fraction, width: int) -> Fraction:
    """Exact value of one accurate-mode FMA on finite operands.

    ``c`` must be representable as a normalized ``width``-bit accumulator.
    """
    p = Fraction(0)
    if a.cls is FpClass.NORMAL and b.cls is FpClass.NORMAL:
        p = to_exact(a).to_fraction() * to_exact(b).to_fraction()
    if p == 0 or c == 0:
        return p + c
    common = max(_floor_log2(abs(p)), _floor_log2(abs(c)))
    unit = Fraction(2) ** (common - width + 1)
    s = _trunc(p, unit) + _trunc(c, unit)
    if abs(s) >= Fraction(2) ** (common + 1):
        s = _trunc(s, Fraction(2) ** (common + 2 - width))
    return s


def replay_accurate_batch(p_int, p_scale, c_sig, c_exp, p_neg, c_neg, width: int):
    """Vectorized replay on an integer grid.

    The product is ``±p_int * 2**p_scale`` and the partial sum
    ``±c_sig * 2**(c_exp - width + 1)`` (normalized, nonzero). Returns
    ``(neg, exp, grid_value, grid)`` with the result magnitude equal to
    ``grid_value * 2**grid`` and ``exp`` its floor-log2 (undefined for zero).
    """
    c_scale = c_exp - width + 1
    grid = np.minimum(p_scale, c_scale)
    pv = p_int << (p_scale - grid)
    cv = c_sig << (c_scale - grid)
    e_p = bit_length_array(pv) - 1 + grid
    e_c = bit_length_array(cv) - 1 + grid
    common = np.maximum(e_p, e_c)
    u = np.maximum(common - width + 1 - grid, 0)
    pt = (pv >> u) << u
    ct = (cv >> u) << u
    s = np.where(p_neg, -pt, pt) + np.where(c_neg, -ct, ct)
    mag = np.abs(s)
    over = mag >= (np.int64(1) << np.minimum(common + 1 - grid, 62))
    u2 = np.maximum(common + 2 - width - grid, 0)
    mag = np.where(over, (mag >> u2) << u2, mag)
    exp = bit_length_array(mag) - 1 + grid
    return s < 0, exp, mag, grid


@dataclass
class AccurateSweep:
    """Result of the exhaustive accurate-mode sweep."""

    cases: int = 0
    mismatches: list[str] = field(default_factory=list)
    like_sign_violations: list[str] = field(default_factory=list)
    far_unlike_violations: list[str] = field(default_factory=list)
    scalar_checked: int = 0
    scalar_mismatches: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.mismatches or self.like_sign_violations
                    or self.far_unlike_violations or self.scalar_mismatches)


def accurate_sweep_domain(fmt: FloatFormat = BF16):
    """Operand grid: all significand pairs, four partial-sum variants each.

    Variants per product: the product significand itself (exact cancellation
    at equal exponents), the same with its LSB flipped (maximal
    cancellation), and two interleavings of the operand bits.
    """
    p = fmt.precision
    w = 2 * p
    sigs = np.arange(1 << (p - 1), 1 << p, dtype=np.int64)
    sa, sb = (g.ravel() for g in np.meshgrid(sigs, sigs, indexing="ij"))
    prod = sa * sb
    hi = prod >> (w - 1)
    psig = np.where(hi.astype(bool), prod, prod << 1)
    top = np.int64(1) << (w - 1)
    variants = [psig, psig ^ 1, (sb << p) | sa | top, (sa << p) | sb | top]
    sa = np.tile(sa, 4)
    sb = np.tile(sb, 4)
    csig = np.concatenate(variants)
    return sa, sb, csig


def check_accurate_sweep(fmt: FloatFormat = BF16, diffs=range(-20, 21),
                         scalar_stride: int = 97, limit: int = 20) -> AccurateSweep:
    """Accurate PE against the replay oracle plus the effective-operation laws.

    ``diffs`` is the product exponent minus the partial-sum exponent. Every
    ``scalar_stride``-th case is also run through the scalar :func:`pe_fma`.
    """
    cfg = PEConfig(fmt, NormMode())
    w = cfg.acc_sig_bits
    sa, sb, csig = accurate_sweep_domain(fmt)
    n = sa.size
    e_prod = (bit_length_array(sa * sb) - (2 * fmt.precision - 1)).astype(np.int64)
    res = AccurateSweep()
    one = np.ones(n, np.int64)
    zeros = np.zeros(n, np.int64)
    normal = np.full(n, FpClass.NORMAL, np.int8)
    for d in diffs:
        c_exp = e_prod - d
        for a_neg in (False, True):
            for c_neg in (False, True):
                an = np.full(n, a_neg)
                cn = np.full(n, c_neg)
                a = (normal, an, zeros, sa)
                b = (normal, np.zeros(n, bool), zeros, sb)
                c = SumArrays(normal, cn, c_exp, csig)
                out, tr = fma_batch(a, b, c, cfg)
                res.cases += n

                neg, exp, mag, grid = replay_accurate_batch(
                    sa * sb, -2 * fmt.man_bits * one, csig, c_exp, an, cn, w)
                zero = mag == 0
                shift = out.exp - w + 1 - grid
                got = np.where(shift >= 0, out.sig << np.maximum(shift, 0),
                               out.sig >> np.maximum(-shift, 0))
                lost = np.where(shift < 0, out.sig & ((np.int64(1) << np.maximum(-shift, 0)) - 1), 0)
                ok = np.where(zero, out.cls == FpClass.ZERO,
                              (out.cls == FpClass.NORMAL) & (got == mag) & (lost == 0)
                              & (out.exp == exp) & (out.neg == neg))
                for i in np.flatnonzero(~ok)[:max(0, limit - len(res.mismatches))]:
                    res.mismatches.append(
                        f"a_sig={sa[i]:#x} a_neg={a_neg} b_sig={sb[i]:#x} c_sig={csig[i]:#x} "
                        f"c_exp={c_exp[i]} c_neg={c_neg} -> sig={out.sig[i]:#x} exp={out.exp[i]}")

                like = ~tr.subtract
                bad = like & ~tr.carry & (tr.accurate_shift != 0)
                for i in np.flatnonzero(bad)[:max(0, limit - len(res.like_sign_violations))]:
                    res.like_sign_violations.append(
                        f"a_sig={sa[i]:#x} b_sig={sb[i]:#x} c_sig={csig[i]:#x} d={d} "
                        f"shift={tr.accurate_shift[i]}")
                far = tr.subtract & (np.abs(tr.exp_diff) > 1)
                bad = far & (tr.accurate_shift > 1)
                for i in np.flatnonzero(bad)[:max(0, limit - len(res.far_unlike_violations))]:
                    res.far_unlike_violations.append(
                        f"a_sig={sa[i]:#x} b_sig={sb[i]:#x} c_sig={csig[i]:#x} d={d} "
                        f"shift={tr.accurate_shift[i]}")

                if scalar_stride:
                    for i in range(d % scalar_stride, n, scalar_stride):
                        av = FpValue(FpClass.NORMAL, -1 if a_neg else 1, 0, int(sa[i]))
                        bv = FpValue(FpClass.NORMAL, 1, 0, int(sb[i]))
                        cv = InternalSum(FpClass.NORMAL, -1 if c_neg else 1, int(c_exp[i]),
                                         int(csig[i]), w)
                        s, t = pe_fma(av, bv, cv, cfg)
                        res.scalar_checked += 1
                        if (s != out.item(i, w) or t != tr.item(i, w)) \
                                and len(res.scalar_mismatches) < limit:
                            res.scalar_mismatches.append(f"scalar/batch differ at {av} {bv} {cv}")
    return res
