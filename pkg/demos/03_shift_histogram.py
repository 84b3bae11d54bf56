# How far do partial sums need to shift?
# ======================================
#
# Run a small single-head attention block through a 64x64 array with an
# accurate normalizer and bin every normalization event. Most events need
# at most a few bits, which is the premise behind cheap approximate
# normalizers.

# %%
import numpy as np

from approxnorm import ArrayConfig, attention_workload, shift_histogram

work = attention_workload(64, 64, seed=0)
reports = work.run(ArrayConfig(64, 64), trace=True)
hist = shift_histogram(reports)

# %%
print("events:", hist.total)
for key, n in hist.to_dict()["bins"].items():
    if n:
        print(f"{key:>14}: {n:7d}  {n / hist.total:6.2%}")

# %%
print("needing <= 3 bits (carry counted as 1):", f"{hist.fraction_at_most(3):.3f}")
print("needing <= 3 bits (carry excluded):    ",
      f"{hist.fraction_at_most(3, include_carry=False):.3f}")

# %%
# Per matmul view. The three products have very different output scales but
# similar shift profiles.
for name, r in zip(("Q K^T", "P V", "O Wo"), reports):
    h = shift_histogram([r])
    print(f"{name:6s} <=3: {h.fraction_at_most(3):.3f}  mean |y| "
          f"{np.abs(r.output.to_floats()).mean():.3f}")
