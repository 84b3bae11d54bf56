# Formats and a single multiply-add
# =================================
#
# Every value in the emulator is a bit pattern of some small float format.
# This walkthrough decodes a few BF16 patterns, rounds exact values into
# the format and pushes one multiply-add through a processing element.

# %%
from fractions import Fraction

from approxnorm import BF16, E4M3, ExactDyadic, InternalSum, NormMode, PEConfig, decode, encode, \
    pe_fma, round_exact, to_exact
from approxnorm.formats import from_float, to_float

# %%
# BF16 keeps the FP32 exponent range with only 7 stored mantissa bits.
for bits in (0x3F80, 0x4049, 0xC000, 0x0001, 0x7F80, 0x7FC1):
    v = decode(bits, BF16)
    print(f"{bits:#06x} -> {v.cls.name:6s} {to_float(bits, BF16)!r}")

# %%
# Subnormal patterns flush to zero and every NaN re-encodes as the canonical
# quiet NaN.
print(hex(encode(decode(0x0001, BF16), BF16)), hex(encode(decode(0x7FC1, BF16), BF16)))

# %%
# Rounding is to nearest with ties to even. 257 sits halfway between the
# neighbours 256 and 258, and 256 has the even mantissa.
for n in (257, 258, 259):
    r = round_exact(ExactDyadic.make(n), BF16)
    print(n, "->", to_float(encode(r, BF16), BF16))

# %%
# FP8 E4M3 runs out of range quickly.
print([to_float(from_float(x, E4M3), E4M3) for x in (0.3, 17.0, 239.0, 300.0)])

# %%
# One FMA. The accumulator keeps a 16-bit significand, so the partial sum
# carries more precision than BF16 until the south edge rounds it.
a, b = decode(from_float(1.5, BF16), BF16), decode(from_float(-1.25, BF16), BF16)
c = InternalSum.from_value(decode(from_float(2.0, BF16), BF16))
s, trace = pe_fma(a, b, c, PEConfig(BF16, NormMode()))
print(s.to_exact().to_fraction(), trace)
assert s.to_exact().to_fraction() == Fraction(3, 2) * Fraction(-5, 4) + 2

# %%
# Exact values are sign, odd mantissa and a power-of-two scale.
x = to_exact(decode(0x4049, BF16))
print(x, float(x))
