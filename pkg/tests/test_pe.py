import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from approxnorm.checks import replay_accurate_fma
from approxnorm.formats import BF16, E4M3, FpClass, FpValue, decode, from_float
from approxnorm.pe import (ACCURATE, EffectiveOp, InternalSum, MulStageOut, NormMode, PEConfig,
                           SumArrays, add_magnitudes, align, fma_batch, multiply_stage,
                           normalize_accurate, normalize_approx, normalize_batch, pe_fma)

W = 16
AN12 = PEConfig(BF16, NormMode(1, 2))


def bf(x):
    return decode(from_float(x, BF16), BF16)


def test_norm_mode_parse_roundtrip():
    assert NormMode.parse("an-1-2") == NormMode(1, 2)
    assert (NormMode.parse("an-1-2").k, NormMode.parse("an-1-2").lam) == (1, 2)
    assert NormMode.parse("accurate").accurate
    for text in ("accurate", "an-1-1", "an-2-2", "an-3-1"):
        assert str(NormMode.parse(text)) == text
    for bad in ("an-0-1", "an-1", "approx", "an-1-x"):
        with pytest.raises(ValueError):
            NormMode.parse(bad)


def test_pe_config():
    assert PEConfig().acc_sig_bits == 16
    assert PEConfig(E4M3).acc_sig_bits == 8
    assert PEConfig(BF16, NormMode(2, 2)).label == "bf16an-2-2"
    with pytest.raises(ValueError):
        PEConfig(E4M3, NormMode(5, 4))


def test_multiply_stage_examples():
    p = multiply_stage(bf(1.0), bf(1.0), PEConfig())
    assert (p.significand, p.exponent) == (0b1000000000000000, 0)
    p = multiply_stage(bf(1.5), bf(1.5), PEConfig())
    assert (p.significand, p.exponent) == (0b1001000000000000, 1)
    p = multiply_stage(bf(-1.5), bf(2.0), PEConfig())
    assert (p.sign, p.exponent) == (-1, 1)


def test_multiply_stage_exhaustive_significands():
    for sa in range(128, 256):
        for sb in range(128, 256):
            a = FpValue(FpClass.NORMAL, 1, 0, sa)
            b = FpValue(FpClass.NORMAL, 1, 0, sb)
            p = multiply_stage(a, b, PEConfig())
            assert p.significand >> 15 == 1
            # value check: sig * 2**(exp-15) == sa*sb * 2**-14
            assert p.significand << 14 == (sa * sb) << (15 - p.exponent)


def test_multiply_stage_specials():
    cfg = PEConfig()
    assert multiply_stage(FpValue.inf(), FpValue.zero(), cfg).cls is FpClass.NAN
    assert multiply_stage(FpValue.nan(), bf(1.0), cfg).cls is FpClass.NAN
    p = multiply_stage(FpValue.inf(-1), bf(2.0), cfg)
    assert (p.cls, p.sign) == (FpClass.INF, -1)
    assert multiply_stage(FpValue.zero(), bf(3.0), cfg).cls is FpClass.ZERO


def test_align_examples():
    p = MulStageOut(FpClass.NORMAL, 1, 5, 0xC000)
    c = InternalSum(FpClass.NORMAL, 1, 5, 0xA5A5)
    assert align(p, c) == (0xC000, 0xA5A5, 5)
    c = InternalSum(FpClass.NORMAL, 1, 2, 0xA5A5)
    assert align(p, c) == (0xC000, 0xA5A5 >> 3, 5)
    c = InternalSum(FpClass.NORMAL, 1, -15, 0xFFFF)
    assert align(p, c) == (0xC000, 0, 5)
    c = InternalSum(FpClass.NORMAL, 1, 25, 0x8000)
    assert align(p, c) == (0, 0x8000, 25)


def test_add_magnitudes_examples():
    raw, sign, op = add_magnitudes(0xC000, 0xC000, 1, 1)
    assert raw >> 16 == 1 and op is EffectiveOp.ADD
    assert add_magnitudes(0xC000, 0xC000, 1, -1) == (0, 1, EffectiveOp.SUBTRACT)
    assert add_magnitudes(0x8000, 0xC000, 1, -1) == (0x4000, -1, EffectiveOp.SUBTRACT)


def test_add_magnitudes_far_unlike_single_zero():
    # exhaustive on an 8-bit frame: exp_diff > 1 leaves at most one leading zero
    w = 8
    for big in range(1 << (w - 1), 1 << w):
        for small in range(1 << (w - 1), 1 << w):
            for d in range(2, w + 1):
                raw, _, _ = add_magnitudes(big, small >> d, 1, -1)
                assert w - raw.bit_length() <= 1


def test_normalize_accurate_examples():
    s, t = normalize_accurate(0x8123, 1, 0)
    assert t.applied_shift == 0 and s.significand == 0x8123
    s, t = normalize_accurate(0x1234, 1, 0)
    assert t.applied_shift == 3 and s.exponent == -3 and s.significand == 0x1234 << 3
    s, t = normalize_accurate(0x18000, 1, 0)
    assert t.carry_right_shift and s.exponent == 1 and s.significand == 0xC000
    s, t = normalize_accurate(0, 1, 4)
    assert s.cls is FpClass.ZERO and t.accurate_shift == 16


def test_normalize_accurate_exhaustive():
    for raw in range(1 << 17):
        s, t = normalize_accurate(raw, 1, 0)
        assert s.cls is FpClass.ZERO or s.significand >> 15 == 1
        assert t.applied_shift == t.accurate_shift


def test_normalize_approx_examples():
    s, t = normalize_approx(0b0100_0000_0000_0000, 1, 0, 1, 2)
    assert t.applied_shift == 1 and not t.unnormalized and s.significand >> 15
    s, t = normalize_approx(0b0010_0000_0000_0000, 1, 0, 1, 2)
    assert t.applied_shift == 1 and t.unnormalized and s.significand == 0b0100_0000_0000_0000
    assert t.accurate_shift == 2
    s, t = normalize_approx(0b0001_0000_0000_0000, 1, 0, 1, 2)
    assert t.applied_shift == 3 and not t.unnormalized
    s, t = normalize_approx(0, 1, 0, 1, 2)
    assert s.cls is FpClass.ZERO and t.applied_shift == 3


def test_an22_shift_set():
    seen = {normalize_approx(raw, 1, 0, 2, 2)[1].applied_shift for raw in range(1, 1 << 16)}
    assert seen == {0, 2, 4}


@pytest.mark.parametrize("k,lam,exact_set", [(1, 1, {0, 1, 2}), (1, 2, {0, 1, 3})])
def test_approx_matches_accurate_on_detectable_shifts(k, lam, exact_set):
    for raw in range(1, 1 << 17):
        acc, ta = normalize_accurate(raw, 1, 0)
        app, tb = normalize_approx(raw, 1, 0, k, lam)
        if ta.accurate_shift in exact_set or ta.carry_right_shift:
            assert acc == app
        else:
            assert tb.short_shift


def test_pe_fma_examples():
    s, t = pe_fma(bf(1.0), bf(1.0), InternalSum.zero(), PEConfig())
    assert (s.significand, s.exponent, t.applied_shift) == (0x8000, 0, 0)
    s, t = pe_fma(bf(1.0), bf(1.0), InternalSum.from_value(bf(-1.0)), PEConfig())
    assert s.cls is FpClass.ZERO and s.sign == 1


@pytest.mark.parametrize("a,b,c,expected", [
    (FpValue.nan(), 1.0, 0.0, FpClass.NAN),
    (1.0, 1.0, FpValue.nan(), FpClass.NAN),
    (FpValue.inf(), 0.0, 1.0, FpClass.NAN),
    (FpValue.inf(), 1.0, FpValue.inf(-1), FpClass.NAN),
    (FpValue.inf(), 1.0, FpValue.inf(), FpClass.INF),
    (FpValue.inf(), -1.0, 5.0, FpClass.INF),
    (1.0, 1.0, FpValue.inf(-1), FpClass.INF),
])
@pytest.mark.parametrize("cfg", [PEConfig(), AN12])
def test_pe_fma_specials(a, b, c, expected, cfg):
    val = lambda x: x if isinstance(x, FpValue) else bf(x)
    s, t = pe_fma(val(a), val(b), InternalSum.from_value(val(c)), cfg)
    assert s.cls is expected and t.special


def test_pe_fma_inf_sign():
    s, _ = pe_fma(FpValue.inf(), bf(-1.0), InternalSum.from_value(bf(5.0)), PEConfig())
    assert s.sign == -1


def test_pe_fma_zero_addends():
    cfg = PEConfig()
    s, t = pe_fma(bf(0.0), bf(3.0), InternalSum.from_value(bf(-2.5)), cfg)
    assert s.to_exact().to_fraction() == Fraction(-5, 2) and t.applied_shift == 0
    s, t = pe_fma(bf(-0.0), bf(3.0), InternalSum.zero(sign=-1), cfg)
    assert s.cls is FpClass.ZERO and s.sign == -1
    s, _ = pe_fma(bf(-0.0), bf(3.0), InternalSum.zero(), cfg)
    assert s.cls is FpClass.ZERO and s.sign == 1


def test_random_chains_against_exact_replay():
    rng = random.Random(11)
    cfg = PEConfig()
    for _ in range(30):
        s, exact = InternalSum.zero(), Fraction(0)
        for _ in range(256):
            a = bf(rng.gauss(0, 1) * 2.0 ** rng.randint(-6, 6))
            b = bf(rng.gauss(0, 1))
            s, _t = pe_fma(a, b, s, cfg)
            exact = replay_accurate_fma(a, b, exact, W)
            assert s.to_exact().to_fraction() == exact


def test_like_sign_only_needs_carry_or_nothing():
    rng = random.Random(5)
    cfg = PEConfig()
    for _ in range(20000):
        a, b = bf(abs(rng.gauss(0, 1))), bf(abs(rng.gauss(0, 1)))
        c = InternalSum.from_value(bf(abs(rng.gauss(0, 4))))
        _, t = pe_fma(a, b, c, cfg)
        assert t.effective_op is EffectiveOp.ADD and t.accurate_shift == 0


# -- property tests ---------------------------------------------------------

bf16_bits = st.integers(0, 0xFFFF)
finite_bits = bf16_bits.filter(lambda b: (b >> 7) & 0xFF != 0xFF)
modes = st.sampled_from([ACCURATE, NormMode(1, 1), NormMode(1, 2), NormMode(2, 2),
                         NormMode(3, 3), NormMode(2, 1)])


@st.composite
def internal_sums(draw, width=W, allow_special=True):
    kind = draw(st.sampled_from(["zero", "normal", "normal", "normal", "partial", "inf", "nan"]
                                if allow_special else ["zero", "normal", "normal", "partial"]))
    sign = draw(st.sampled_from([1, -1]))
    if kind == "zero":
        return InternalSum.zero(width, sign)
    if kind == "inf":
        return InternalSum(FpClass.INF, sign, 0, 0, width)
    if kind == "nan":
        return InternalSum(FpClass.NAN, 1, 0, 0, width)
    exp = draw(st.integers(-30, 30))
    if kind == "normal":
        sig = draw(st.integers(1 << (width - 1), (1 << width) - 1))
    else:
        sig = draw(st.integers(1, (1 << (width - 1)) - 1))
    return InternalSum(FpClass.NORMAL, sign, exp, sig, width)


@settings(max_examples=500, deadline=None)
@given(bf16_bits, bf16_bits, internal_sums(), modes)
def test_batch_matches_scalar(a_bits, b_bits, c, mode):
    cfg = PEConfig(BF16, mode)
    from approxnorm.formats import decode_array
    a, b = decode(a_bits, BF16), decode(b_bits, BF16)
    s, t = pe_fma(a, b, c, cfg)
    out, tr = fma_batch(decode_array(np.array([a_bits]), BF16),
                        decode_array(np.array([b_bits]), BF16),
                        SumArrays.from_sums([c]), cfg)
    assert out.item(0, W) == s
    assert tr.item(0, W) == t


@settings(max_examples=300, deadline=None)
@given(finite_bits, finite_bits, internal_sums(allow_special=False), modes)
def test_sign_symmetry(a_bits, b_bits, c, mode):
    cfg = PEConfig(BF16, mode)
    a, b = decode(a_bits, BF16), decode(b_bits, BF16)
    s1, t1 = pe_fma(-a, b, -c, cfg)
    s2, t2 = pe_fma(a, b, c, cfg)
    assert t1 == t2
    if s2.cls is FpClass.ZERO:
        assert s1.cls is FpClass.ZERO
    else:
        assert s1 == -s2


@settings(max_examples=300, deadline=None)
@given(finite_bits, finite_bits, internal_sums(allow_special=False),
       st.sampled_from([NormMode(1, 1), NormMode(1, 2), NormMode(2, 2)]))
def test_approx_never_over_normalizes(a_bits, b_bits, c, mode):
    s, t = pe_fma(decode(a_bits, BF16), decode(b_bits, BF16), c, PEConfig(BF16, mode))
    if t.carry_right_shift or t.zero_sum:
        return
    assert t.applied_shift in mode.shifts
    assert t.applied_shift <= t.accurate_shift
    assert bool(s.significand >> 15) == (t.applied_shift == t.accurate_shift)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite_bits, finite_bits), min_size=1, max_size=24))
def test_approx_equals_accurate_without_short_shifts(pairs):
    # until the first short shift the two datapaths are bit-identical
    acc = app = InternalSum.zero()
    for a_bits, b_bits in pairs:
        a, b = decode(a_bits, BF16), decode(b_bits, BF16)
        acc, _ = pe_fma(a, b, acc, PEConfig())
        app, t = pe_fma(a, b, app, AN12)
        if t.short_shift:
            break
        assert acc == app


def test_normalize_batch_matches_scalar():
    raw = np.arange(1 << 16)
    for mode in (ACCURATE, NormMode(1, 2), NormMode(2, 3)):
        shift, lz = normalize_batch(raw, 16, mode)
        for r in range(0, 1 << 16, 37):
            if mode.accurate:
                _, t = normalize_accurate(r, 1, 0)
            else:
                _, t = normalize_approx(r, 1, 0, mode.k, mode.lam)
            assert (shift[r], lz[r]) == (t.applied_shift, t.accurate_shift)


def test_monotonicity_probe():
    # same-sign accumulations: raising one addend never lowers the result
    rng = random.Random(1)
    cfg = PEConfig()

    def fold(xs, ws):
        s = InternalSum.zero()
        for a, b in zip(xs, ws):
            s, _ = pe_fma(decode(a, BF16), decode(b, BF16), s, cfg)
        return s.to_exact().to_fraction()

    counterexamples = []
    for _ in range(1500):
        n = rng.randint(2, 16)
        sign = rng.choice((1, -1))
        xs = [from_float(sign * abs(rng.gauss(0, 1)), BF16) for _ in range(n)]
        ws = [from_float(abs(rng.gauss(0, 1)), BF16) for _ in range(n)]
        base = fold(xs, ws)
        i = rng.randrange(n)
        bumped = list(xs)
        bumped[i] += rng.choice((1, 3, 17))  # larger magnitude, same sign
        after = fold(bumped, ws)
        if (after - base) * sign < 0:
            counterexamples.append((xs, ws, i))
    assert not counterexamples, counterexamples[:3]
