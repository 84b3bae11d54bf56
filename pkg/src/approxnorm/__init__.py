"""Emulation of floating-point matrix engines whose FMA units normalize
approximately, with tooling to measure what that costs numerically."""

from .formats import (BF16, E4M3, E5M2, FP32, ExactDyadic, FloatFormat, FpClass, FpValue,
                      decode, encode, exact_dot, parse_format, round_exact, to_exact)
from .pe import (ACCURATE, InternalSum, NormMode, NormTrace, PEConfig, pe_fma)
from .systolic import ArrayConfig, MatrixF, MatmulReport, attention_workload, matmul, south_round
from .analysis import ErrorReport, ShiftHistogram, compare, shift_histogram, sweep

__version__ = "0.1.0"
