"""Exit criteria for the emulator. Each test prints one PASS/FAIL line; the
collected lines are repeated in the pytest terminal summary."""

import time

import numpy as np
import pytest

from approxnorm.analysis import (_round_exact_matrix, compare, exact_matmul, gaussian_suite,
                                 shift_histogram, unexplained_mismatches)
from approxnorm.checks import check_accurate_sweep, check_shift_dominance
from approxnorm.formats import (BF16, E4M3, E5M2, FloatFormat, FpClass, FpValue, decode,
                                encode, round_exact, to_exact, ExactDyadic)
from approxnorm.pe import InternalSum, NormMode, PEConfig, pe_fma
from approxnorm.systolic import ArrayConfig, MatrixF, attention_workload, matmul

MODES = {"accurate": NormMode(), "an-1-1": NormMode(1, 1), "an-1-2": NormMode(1, 2),
         "an-2-2": NormMode(2, 2)}


@pytest.fixture(scope="module")
def sweep_result():
    start = time.perf_counter()
    res = check_accurate_sweep(BF16)
    return res, time.perf_counter() - start


@pytest.fixture(scope="module")
def gaussian_runs():
    """100 seeded 64x64 standard-Gaussian matmuls under every configuration."""
    suite = gaussian_suite(100, 64, seed=0)
    refs, outs, unexplained = [], {m: [] for m in MODES}, 0
    for x, w in suite:
        refs.append(_round_exact_matrix(exact_matmul(x, w), BF16))
        reports = {}
        for name, mode in MODES.items():
            cfg = ArrayConfig(64, 64, PEConfig(BF16, mode))
            reports[name] = matmul(x, w, cfg, trace=(name == "an-1-2"))
            outs[name].append(reports[name].output.bits)
        unexplained += len(unexplained_mismatches(reports["an-1-2"], reports["accurate"]))
    ref = MatrixF(np.vstack(refs))
    errors = {name: compare(MatrixF(np.vstack(bits)), ref) for name, bits in outs.items()}
    mismatched = int(np.count_nonzero(np.vstack(outs["an-1-2"]) != np.vstack(outs["accurate"])))
    return errors, mismatched, unexplained


def test_c1_shift_dominance_exhaustive(record):
    start = time.perf_counter()
    violations = check_shift_dominance(16, ks=(1, 2, 3), lams=(1, 2, 3))
    elapsed = time.perf_counter() - start
    ok = not violations and elapsed < 10
    record("C1 shift dominance over 2^17 raw sums x 9 (k, lambda)", ok,
           f"{len(violations)} violations, {elapsed:.1f}s")
    assert not violations, violations
    assert elapsed < 10


def test_c2_accurate_oracle_equivalence(record, sweep_result):
    res, elapsed = sweep_result
    ok = not res.mismatches and not res.scalar_mismatches and elapsed < 120
    record("C2 accurate PE == exact replay", ok,
           f"{res.cases} cases, {len(res.mismatches)} mismatches, "
           f"{res.scalar_checked} scalar cross-checks, {elapsed:.1f}s")
    assert res.cases == 65536 * 41 * 4
    assert not res.mismatches, res.mismatches
    assert not res.scalar_mismatches, res.scalar_mismatches
    assert elapsed < 120


def test_c3_case_laws(record, sweep_result):
    res, _ = sweep_result
    ok = not res.like_sign_violations and not res.far_unlike_violations
    record("C3 like-sign no left shift; unlike |diff|>1 at most one leading zero", ok,
           f"{len(res.like_sign_violations)} + {len(res.far_unlike_violations)} violations")
    assert not res.like_sign_violations, res.like_sign_violations
    assert not res.far_unlike_violations, res.far_unlike_violations


def test_c4_histogram_shape(record):
    start = time.perf_counter()
    reports = attention_workload(64, 64, seed=0).run(ArrayConfig(64, 64), trace=True)
    h = shift_histogram(reports)
    elapsed = time.perf_counter() - start
    frac = h.fraction_at_most(3)
    ok = frac >= 0.90 and elapsed < 60
    record("C4 accurate shifts <= 3 on attention(64, 64)", ok,
           f"{frac:.4f} of {h.total} events, {elapsed:.1f}s")
    assert frac >= 0.90
    assert elapsed < 60


@pytest.mark.slow
def test_c5_configuration_ordering(record, gaussian_runs):
    errors, _, _ = gaussian_runs
    e = {name: r.mean_abs_rel_error for name, r in errors.items()}
    ok = e["an-1-2"] <= e["an-2-2"] and e["an-1-1"] <= e["an-2-2"] \
        and e["accurate"] <= e["an-1-2"]
    record("C5 error ordering accurate <= an-1-2, an-1-1 <= an-2-2", ok,
           ", ".join(f"{k}={v:.4e}" for k, v in e.items()))
    assert e["an-1-2"] <= e["an-2-2"]
    assert e["an-1-1"] <= e["an-2-2"]
    assert e["accurate"] <= e["an-1-2"]


@pytest.mark.slow
def test_c6_exact_detection_accounting(record, gaussian_runs):
    _, mismatched, unexplained = gaussian_runs
    record("C6 every an-1-2 vs accurate mismatch has a short shift", unexplained == 0,
           f"{mismatched} mismatched elements, {unexplained} unexplained")
    assert unexplained == 0


def test_c7_tiling_transparency(record):
    suite = gaussian_suite(4, 64, seed=1)
    bad = 0
    for mode in (NormMode(), NormMode(1, 2), NormMode(2, 2)):
        for x, w in suite:
            outs = [matmul(x, w, ArrayConfig(rows, 64, PEConfig(BF16, mode))).output
                    for rows in (4, 8, 64)]
            bad += sum(int(np.count_nonzero(o.bits != outs[-1].bits)) for o in outs)
    record("C7 rows in {4, 8, 64} bit-identical", bad == 0, f"{bad} mismatching elements")
    assert bad == 0


def test_c8_roundtrip_and_specials(record):
    failures = []
    for fmt in (BF16, E4M3, E5M2, FloatFormat(3, 2)):
        for bits in range(1 << fmt.total_bits):
            v = decode(bits, fmt)
            biased = (bits >> fmt.man_bits) & fmt.max_biased
            man = bits & ((1 << fmt.man_bits) - 1)
            if biased == fmt.max_biased and man:
                want = fmt.qnan_bits
            elif biased == 0:
                want = bits & (1 << (fmt.total_bits - 1))
            else:
                want = bits
            if encode(v, fmt) != want:
                failures.append(f"{fmt} {bits:#x}")
            if v.cls is FpClass.NORMAL and round_exact(to_exact(v), fmt) != v:
                failures.append(f"{fmt} round_exact {bits:#x}")

    # halfway integers in BF16: 257 -> 256, 259 -> 260, 385 -> 384, 387 -> 388
    ties = {257: 0x4380, 259: 0x4382, 385: 0x43C0, 387: 0x43C2, 511: 0x4400, -257: 0xC380}
    for m, want in ties.items():
        got = encode(round_exact(ExactDyadic.make(m), BF16), BF16)
        if got != want:
            failures.append(f"tie {m}: {got:#x}")

    one = decode(0x3F80, BF16)
    cases = [
        (FpValue.nan(), one, InternalSum.zero(), FpClass.NAN),
        (FpValue.inf(), FpValue.zero(), InternalSum.zero(), FpClass.NAN),
        (FpValue.inf(), one, InternalSum(FpClass.INF, -1), FpClass.NAN),
        (FpValue.inf(), one, InternalSum.from_value(one), FpClass.INF),
        (one, one, InternalSum(FpClass.INF, -1), FpClass.INF),
        (one, one, InternalSum(FpClass.NAN), FpClass.NAN),
    ]
    for mode in MODES.values():
        for a, b, c, want in cases:
            s, _ = pe_fma(a, b, c, PEConfig(BF16, mode))
            if s.cls is not want:
                failures.append(f"pe_fma {mode} {a.cls.name} {b.cls.name} {c.cls.name}")
        x = MatrixF(np.array([[0x3F80, 0x7FC0], [0x7F80, 0x3F80], [0x7F80, 0x3F80]]))
        w = MatrixF(np.array([[0x3F80, 0x3F80], [0xFF80, 0x0000]]))
        out = matmul(x, w, ArrayConfig(2, 2, PEConfig(BF16, mode))).output.bits
        want = np.array([[BF16.qnan_bits] * 2, [BF16.qnan_bits, 0x7F80], [BF16.qnan_bits, 0x7F80]])
        if not np.array_equal(out, want):
            failures.append(f"matmul specials {mode}: {out.tolist()}")
    record("C8 round-trip, RNE ties, NaN/Inf propagation", not failures,
           f"{len(failures)} failures")
    assert not failures, failures[:10]
