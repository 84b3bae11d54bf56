# Sweeping (k, λ)
# ===============
#
# Score a grid of approximate normalizers against the exact product rounded
# to BF16 on a few Gaussian matmuls. Larger first steps k skip more small
# shifts, so error climbs as k grows.

# %%
import warnings

from approxnorm.analysis import gaussian_suite, sweep

suite = gaussian_suite(n=5, size=64, seed=0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    rows = sweep(range(1, 4), range(1, 4), suite, include_accurate=True)

# %%
print(f"{'mode':10s} {'mean rel':>10s} {'max rel':>10s} {'mismatch':>9s} {'unnorm':>7s}")
for r in rows:
    e = r.error
    print(f"{r.label:10s} {e.mean_abs_rel_error:10.3e} {e.max_abs_rel_error:10.3e} "
          f"{e.mismatch_rate:9.4f} {r.hist.unnormalized_rate:7.4f}")

# %%
# ULP distance histogram for the cheapest configuration.
print(rows[-1].label, rows[-1].error.ulp_histogram)
