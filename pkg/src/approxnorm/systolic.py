"""Functional model of a weight-stationary systolic array.

Weights sit in the PEs, inputs stream west to east and partial sums flow
north to south, so output ``(i, j)`` is the fold of PE FMAs over the
reduction index in ascending order. Reductions deeper than the array are
split into vertical tiles that hand the unrounded partial sum to the next
tile; rounding happens once, at the south edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .formats import (BF16, FloatFormat, FpClass, FpValue, decode_array, encode,
                      encode_array, bits_to_float_array, quantize_array)
from .pe import InternalSum, PEConfig, SumArrays, TraceArrays, fma_batch

__all__ = ["ArrayConfig", "MatrixF", "MatmulReport", "matmul", "south_round",
           "south_round_batch", "AttentionWorkload", "attention_workload"]


@dataclass(frozen=True)
class ArrayConfig:
    rows: int = 8
    cols: int = 8
    pe: PEConfig = field(default_factory=PEConfig)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"array dimensions must be positive, got {self.rows}x{self.cols}")


@dataclass(frozen=True, eq=False)
class MatrixF:
    """Matrix of format bit patterns, stored as a 2-D int64 array."""

    bits: np.ndarray
    fmt: FloatFormat = BF16

    def __post_init__(self):
        b = np.array(self.bits, dtype=np.int64)
        if b.ndim != 2:
            raise ValueError(f"expected a 2-D matrix, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @classmethod
    def from_floats(cls, values, fmt: FloatFormat = BF16) -> "MatrixF":
        """Round float values to ``fmt`` with nearest-even."""
        return cls(quantize_array(np.atleast_2d(np.asarray(values, np.float64)), fmt), fmt)

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def data(self) -> list[int]:
        """Row-major bit patterns."""
        return [int(x) for x in self.bits.ravel()]

    @property
    def T(self) -> "MatrixF":
        return MatrixF(self.bits.T, self.fmt)

    def to_floats(self) -> np.ndarray:
        return bits_to_float_array(self.bits, self.fmt)

    def check(self, name: str = "matrix") -> None:
        bad = np.argwhere((self.bits < 0) | (self.bits >= (1 << self.fmt.total_bits)))
        if len(bad):
            i, j = bad[0]
            raise ValueError(f"{name}[{i}][{j}] = {int(self.bits[i, j]):#x} "
                             f"is not a {self.fmt} bit pattern")

    def __eq__(self, other):
        if not isinstance(other, MatrixF):
            return NotImplemented
        return self.fmt == other.fmt and np.array_equal(self.bits, other.bits)


@dataclass
class MatmulReport:
    output: MatrixF
    stats: "ShiftHistogram"
    traces: TraceArrays | None = None
    """Per-FMA traces with shape ``(M, N, K)``, when tracing was requested."""
    label: str = ""


def south_round(s: InternalSum, fmt: FloatFormat) -> int:
    """Renormalize an extended partial sum exactly and round it to ``fmt``."""
    if s.cls is not FpClass.NORMAL:
        return encode(FpValue(s.cls, s.sign), fmt)
    if s.significand == 0:
        return encode(FpValue.zero(s.sign), fmt)
    lz = s.width - s.significand.bit_length()
    return encode(FpValue.normal(s.sign, s.exponent - lz, s.significand), fmt)


def south_round_batch(s: SumArrays, width: int, fmt: FloatFormat) -> np.ndarray:
    return encode_array(s.cls, s.neg, s.exp, s.sig, width, fmt)


def _stack_traces(steps: list[TraceArrays]) -> TraceArrays:
    return TraceArrays(**{name: np.stack([getattr(t, name) for t in steps], axis=-1)
                          for name in TraceArrays.__dataclass_fields__})


def matmul(x: MatrixF, w: MatrixF, cfg: ArrayConfig | None = None,
           trace: bool = False) -> MatmulReport:
    """Emulate ``x @ w`` on the array; see the module docstring for dataflow."""
    from .analysis import ShiftHistogram

    cfg = cfg or ArrayConfig()
    fmt = cfg.pe.fmt
    if x.cols != w.rows:
        raise ValueError(f"inner dimensions disagree: {x.shape} @ {w.shape}")
    for m, name in ((x, "x"), (w, "w")):
        if m.fmt != fmt:
            raise ValueError(f"{name} is {m.fmt}, array is configured for {fmt}")
        m.check(name)
    M, K = x.shape
    N = w.cols
    width = cfg.pe.acc_sig_bits
    xd = decode_array(x.bits, fmt)
    wd = decode_array(w.bits, fmt)

    state = SumArrays.zeros((M, N))
    hist = ShiftHistogram.empty(width, cfg.pe.norm)
    steps: list[TraceArrays] = []
    for k0 in range(0, K, cfg.rows):
        # one vertical tile: partial sums enter from the tile above unrounded
        for t in range(k0, min(k0 + cfg.rows, K)):
            a = tuple(f[:, t, None] for f in xd)
            step_traces = []
            for n0 in range(0, N, cfg.cols):
                cs = slice(n0, n0 + cfg.cols)
                b = tuple(f[None, t, cs] for f in wd)
                c = SumArrays(state.cls[:, cs], state.neg[:, cs], state.exp[:, cs],
                              state.sig[:, cs])
                out, tr = fma_batch(a, b, c, cfg.pe)
                state.cls[:, cs], state.neg[:, cs] = out.cls, out.neg
                state.exp[:, cs], state.sig[:, cs] = out.exp, out.sig
                step_traces.append(tr)
            tr = step_traces[0] if len(step_traces) == 1 else TraceArrays(
                **{name: np.concatenate([getattr(s, name) for s in step_traces], axis=1)
                   for name in TraceArrays.__dataclass_fields__})
            hist.add(tr)
            if trace:
                steps.append(tr)
    out = MatrixF(south_round_batch(state, width, fmt), fmt)
    traces = _stack_traces(steps) if trace and steps else None
    return MatmulReport(out, hist, traces, cfg.pe.label)


@dataclass(frozen=True, eq=False)
class AttentionWorkload:
    """Single-head attention at desk scale.

    Three emulated matmuls: ``S = Q Kᵀ``, ``O = P V`` and ``Y = O Wo``. The
    softmax producing ``P`` and the ``1/sqrt(d)`` scaling run in float64,
    after which ``P`` is rounded back to the format.
    """

    q: MatrixF
    k: MatrixF
    v: MatrixF
    wo: MatrixF

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int, int]]]:
        s, d = self.q.shape
        return [((s, d), (d, s)), ((s, s), (s, d)), ((s, d), (d, d))]

    def run(self, cfg: ArrayConfig | None = None, trace: bool = False) -> list[MatmulReport]:
        cfg = cfg or ArrayConfig()
        fmt = cfg.pe.fmt
        d = self.q.cols
        r1 = matmul(self.q, self.k.T, cfg, trace)
        scores = r1.output.to_floats() / np.sqrt(d)
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        probs = MatrixF.from_floats(e / e.sum(axis=1, keepdims=True), fmt)
        r2 = matmul(probs, self.v, cfg, trace)
        r3 = matmul(r2.output, self.wo, cfg, trace)
        return [r1, r2, r3]


def attention_workload(seq_len: int, d_model: int, seed: int,
                       fmt: FloatFormat = BF16) -> AttentionWorkload:
    if not (1 <= seq_len <= 256 and 1 <= d_model <= 256):
        raise ValueError("attention workload dimensions must be in [1, 256]")
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((seq_len, d_model)) for _ in range(3))
    wo = rng.standard_normal((d_model, d_model)) / np.sqrt(d_model)
    return AttentionWorkload(*(MatrixF.from_floats(m, fmt) for m in (q, k, v, wo)))
