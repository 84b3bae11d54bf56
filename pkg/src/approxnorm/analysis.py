"""Error metrics, normalization-shift histograms and (k, λ) sweeps."""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .formats import BF16, ExactDyadic, FloatFormat, FpClass, decode_array, encode, \
    round_exact, bits_to_float_array
from .pe import NormMode, PEConfig, TraceArrays
from .systolic import ArrayConfig, MatmulReport, MatrixF, matmul

__all__ = ["ShiftHistogram", "ErrorReport", "SweepRow", "compare", "shift_histogram",
           "exact_matmul", "gaussian_suite", "sweep", "unexplained_mismatches"]

CARRY = "carry_right_1"
ZERO = "zero"
SPECIAL = "special"
SCHEMA_VERSION = 1


def _label(key) -> str:
    return key if isinstance(key, str) else str(key)


@dataclass
class ShiftHistogram:
    """Counts of normalization events by shift amount.

    ``counts`` bins the shift the normalizer applied (equal to the needed
    shift in accurate mode); ``needed`` bins the leading-zero count whatever
    the mode. Carry right-shifts, exact-zero sums and NaN/Inf bypasses get
    their own bins so that ``sum(counts.values()) == total``.
    """

    width: int
    mode: str = "accurate"
    counts: Counter = field(default_factory=Counter)
    needed: Counter = field(default_factory=Counter)
    total: int = 0
    unnormalized_events: int = 0
    short_events: int = 0

    @classmethod
    def empty(cls, width: int, norm: NormMode | str = "accurate") -> "ShiftHistogram":
        return cls(width, str(norm))

    def add(self, tr: TraceArrays) -> None:
        regular = ~tr.special & ~tr.zero & ~tr.carry
        applied = np.bincount(tr.applied_shift[regular].ravel(), minlength=self.width + 1)
        needed = np.bincount(tr.accurate_shift[regular].ravel(), minlength=self.width + 1)
        for s in np.flatnonzero(applied):
            self.counts[int(s)] += int(applied[s])
        for s in np.flatnonzero(needed):
            self.needed[int(s)] += int(needed[s])
        for key, mask in ((CARRY, tr.carry), (ZERO, tr.zero), (SPECIAL, tr.special)):
            n = int(np.count_nonzero(mask))
            if n:
                self.counts[key] += n
                self.needed[key] += n
        self.total += tr.special.size
        self.unnormalized_events += int(np.count_nonzero(tr.unnormalized))
        self.short_events += int(np.count_nonzero(tr.short_shift))

    def merge(self, other: "ShiftHistogram") -> "ShiftHistogram":
        if other.width != self.width:
            raise ValueError("cannot merge histograms of different accumulator widths")
        out = ShiftHistogram(self.width, self.mode, self.counts + other.counts,
                             self.needed + other.needed, self.total + other.total,
                             self.unnormalized_events + other.unnormalized_events,
                             self.short_events + other.short_events)
        return out

    def fraction_at_most(self, shift: int, include_carry: bool = True) -> float:
        """Share of all events whose needed normalization is at most ``shift``."""
        small = sum(n for s, n in self.needed.items() if isinstance(s, int) and s <= shift)
        if include_carry:
            small += self.needed.get(CARRY, 0)
        return small / self.total if self.total else 0.0

    @property
    def unnormalized_rate(self) -> float:
        return self.unnormalized_events / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        def bins(c):
            keys = [CARRY] + list(range(self.width + 1)) + [ZERO, SPECIAL]
            return {_label(k): int(c.get(k, 0)) for k in keys}
        return {"schema_version": SCHEMA_VERSION, "mode": self.mode, "width": self.width,
                "total": self.total, "bins": bins(self.counts), "needed": bins(self.needed),
                "unnormalized": self.unnormalized_events, "short_shift": self.short_events}


def shift_histogram(reports: Sequence[MatmulReport]) -> ShiftHistogram:
    """Aggregate the traced normalization events of several matmuls."""
    if not reports:
        raise ValueError("no reports to aggregate")
    hist = None
    for r in reports:
        if r.traces is None:
            raise ValueError("shift_histogram needs reports produced with trace=True")
        h = ShiftHistogram(r.stats.width, r.stats.mode)
        h.add(r.traces)
        hist = h if hist is None else hist.merge(h)
    return hist


@dataclass
class ErrorReport:
    max_abs_rel_error: float
    mean_abs_rel_error: float
    ulp_histogram: dict[int, int]
    mismatch_rate: float
    nan_inf_disagreements: int
    count: int

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "max_abs_rel_error": self.max_abs_rel_error,
                "mean_abs_rel_error": self.mean_abs_rel_error,
                "ulp_histogram": {str(k): v for k, v in sorted(self.ulp_histogram.items())},
                "mismatch_rate": self.mismatch_rate,
                "nan_inf_disagreements": self.nan_inf_disagreements,
                "count": self.count}


def _ordered(bits: np.ndarray, fmt: FloatFormat) -> np.ndarray:
    """Map bit patterns onto a line where adjacent values differ by one."""
    sign = bits >> (fmt.total_bits - 1)
    mag = bits & ((1 << (fmt.total_bits - 1)) - 1)
    return np.where(sign.astype(bool), -mag, mag)


def _round_exact_matrix(exact, fmt: FloatFormat) -> np.ndarray:
    arr = np.asarray(exact, dtype=object)
    out = np.empty(arr.shape, np.int64)
    for idx, x in np.ndenumerate(arr):
        out[idx] = encode(round_exact(x, fmt), fmt)
    return out


def compare(out_a: MatrixF, out_ref: MatrixF, exact_ref=None) -> ErrorReport:
    """Element-wise error of ``out_a``.

    The reference is ``exact_ref`` (a matrix of :class:`ExactDyadic`) rounded
    to the output format when given, otherwise ``out_ref``. Relative error
    falls back to absolute error where the reference is zero.
    """
    if out_a.shape != out_ref.shape:
        raise ValueError(f"shape mismatch: {out_a.shape} vs {out_ref.shape}")
    fmt = out_a.fmt
    ref_bits = out_ref.bits
    if exact_ref is not None:
        ref_bits = _round_exact_matrix(exact_ref, fmt)
        if ref_bits.shape != out_a.shape:
            raise ValueError(f"shape mismatch: {out_a.shape} vs exact {ref_bits.shape}")
    a_bits = out_a.bits
    a = bits_to_float_array(a_bits, fmt)
    r = bits_to_float_array(ref_bits, fmt)
    finite = np.isfinite(a) & np.isfinite(r)
    same_bits = a_bits == ref_bits
    disagree = ~finite & ~same_bits
    err = np.abs(a - r, where=finite, out=np.zeros_like(a))
    denom = np.abs(r)
    rel = np.divide(err, denom, where=finite & (denom > 0), out=err.copy())
    rel = rel[finite]
    ulp = np.abs(_ordered(a_bits, fmt) - _ordered(ref_bits, fmt))
    ulp = np.where(same_bits, 0, ulp)[~disagree]
    hist = {int(u): int(n) for u, n in zip(*np.unique(ulp, return_counts=True))}
    n = a_bits.size
    return ErrorReport(float(rel.max()) if rel.size else 0.0,
                       float(rel.mean()) if rel.size else 0.0,
                       hist, float(np.count_nonzero(~same_bits)) / n if n else 0.0,
                       int(np.count_nonzero(disagree)), n)


def exact_matmul(x: MatrixF, w: MatrixF) -> np.ndarray:
    """Exact ``x @ w`` as an object array of :class:`ExactDyadic`."""
    if x.cols != w.rows:
        raise ValueError(f"inner dimensions disagree: {x.shape} @ {w.shape}")
    ints, scales = [], []
    for m in (x, w):
        cls, neg, exp, sig = decode_array(m.bits, m.fmt)
        if np.any((cls == FpClass.INF) | (cls == FpClass.NAN)):
            raise ValueError("exact matmul is undefined for Inf/NaN inputs")
        normal = cls == FpClass.NORMAL
        base = int(exp[normal].min()) if normal.any() else 0
        vals = np.empty(m.shape, dtype=object)
        for idx in np.ndindex(m.shape):
            v = int(sig[idx]) << int(exp[idx] - base) if normal[idx] else 0
            vals[idx] = -v if neg[idx] else v
        ints.append(vals)
        scales.append(base - m.fmt.man_bits)
    prod = np.dot(ints[0], ints[1])
    out = np.empty(prod.shape, dtype=object)
    for idx, v in np.ndenumerate(prod):
        out[idx] = ExactDyadic.make(int(v), scales[0] + scales[1])
    return out


def gaussian_suite(n: int = 100, size: int = 64, seed: int = 0,
                   fmt: FloatFormat = BF16) -> list[tuple[MatrixF, MatrixF]]:
    """Seeded standard-Gaussian square matmul operands."""
    rng = np.random.default_rng(seed)
    return [(MatrixF.from_floats(rng.standard_normal((size, size)), fmt),
             MatrixF.from_floats(rng.standard_normal((size, size)), fmt))
            for _ in range(n)]


@dataclass
class SweepRow:
    k: int | None
    lam: int | None
    error: ErrorReport
    hist: ShiftHistogram

    @property
    def label(self) -> str:
        return "accurate" if self.k is None else f"an-{self.k}-{self.lam}"


def sweep(k_range: Iterable[int], lambda_range: Iterable[int],
          workload: Sequence[tuple[MatrixF, MatrixF]] | Callable[[], Sequence],
          ref_mode: str = "exact", rows: int = 64, cols: int = 64,
          include_accurate: bool = False) -> list[SweepRow]:
    """Run every valid ``(k, λ)`` over ``workload`` and score it.

    ``ref_mode`` is ``"exact"`` (exact product rounded to the format) or
    ``"accurate"`` (the accurate-normalization engine).
    """
    if ref_mode not in ("exact", "accurate"):
        raise ValueError(f"ref_mode must be 'exact' or 'accurate', got {ref_mode!r}")
    pairs = list(workload() if callable(workload) else workload)
    if not pairs:
        raise ValueError("empty workload")
    fmt = pairs[0][0].fmt
    base = PEConfig(fmt)
    modes: list[NormMode] = [NormMode()] if include_accurate else []
    for k in sorted(set(k_range)):
        for lam in sorted(set(lambda_range)):
            try:
                modes.append(PEConfig(fmt, NormMode(k, lam)).norm)
            except ValueError as e:
                warnings.warn(f"skipping (k={k}, lambda={lam}): {e}")

    refs = []
    for x, w in pairs:
        if ref_mode == "exact":
            refs.append(_round_exact_matrix(exact_matmul(x, w), fmt))
        else:
            refs.append(matmul(x, w, ArrayConfig(rows, cols, base)).output.bits)
    ref = MatrixF(np.vstack(refs), fmt)

    table = []
    for mode in modes:
        cfg = ArrayConfig(rows, cols, PEConfig(fmt, mode))
        hist = ShiftHistogram.empty(cfg.pe.acc_sig_bits, mode)
        outs = []
        for x, w in pairs:
            r = matmul(x, w, cfg)
            hist = hist.merge(r.stats)
            outs.append(r.output.bits)
        err = compare(MatrixF(np.vstack(outs), fmt), ref)
        table.append(SweepRow(mode.k, mode.lam, err, hist))
    return table


def unexplained_mismatches(approx: MatmulReport, accurate: MatmulReport) -> np.ndarray:
    """Indices where outputs differ but the approximate run never fell short.

    A short normalization is a nonzero, non-carry sum shifted by less than its
    leading-zero count; without one the two datapaths are bit-identical.
    """
    if approx.traces is None:
        raise ValueError("approximate report needs traces")
    differ = approx.output.bits != accurate.output.bits
    explained = approx.traces.short_shift.any(axis=-1)
    return np.argwhere(differ & ~explained)
