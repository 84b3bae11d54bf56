# Approximate normalization, step by step
# =======================================
#
# After an addition the accurate normalizer counts leading zeros and shifts
# by exactly that much. The approximate normalizer with parameters (k, λ)
# only looks at two bit groups and shifts by 0, k or k + λ. Whenever the true
# leading-zero count is outside that set it shifts by less and leaves the
# sum unnormalized, which costs precision in later accumulations.

# %%
from approxnorm.pe import leading_zeros, normalize_accurate, normalize_approx

W = 16

# %%
# Raw sums have W + 1 bits; bit W is the carry-out.
for raw in (0x1_8000, 0x8000, 0x4000, 0x2000, 0x1000, 0x0800, 0x0100):
    _, acc = normalize_accurate(raw, 1, 0, W)
    _, apx = normalize_approx(raw, 1, 0, 1, 2, W)
    print(f"raw={raw:#07x} lz={leading_zeros(raw, W):2d} "
          f"accurate={acc.applied_shift:2d} an-1-2={apx.applied_shift:2d} "
          f"carry={apx.carry_right_shift} short={apx.short_shift}")

# %%
# The shift menu for several (k, λ). A short shift never overshoots: the
# approximate result is always a left shift of at most the needed amount.
for k, lam in ((1, 1), (1, 2), (2, 2), (3, 3)):
    menu = sorted({normalize_approx(1 << (W - 1 - z), 1, 0, k, lam, W)[1].applied_shift
                   for z in range(W)})
    print(f"an-{k}-{lam}: applied shifts seen {menu}")
