"""Command-line front end.

Exit codes: 0 success, 2 bad arguments or unparseable tokens, 3 validation
or I/O failure, 4 a property check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from .analysis import SCHEMA_VERSION, ShiftHistogram, gaussian_suite, sweep
from .checks import check_accurate_sweep, check_shift_dominance, replay_accurate_fma
from .formats import FloatFormat, decode, parse_format, round_fraction, to_float
from .pe import InternalSum, NormMode, PEConfig, pe_fma
from .systolic import ArrayConfig, MatrixF, attention_workload, matmul, south_round

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_PROPERTY = 0, 2, 3, 4


class ParseError(Exception):
    pass


class ValidationError(Exception):
    pass


# -- token and file parsing -------------------------------------------------

def parse_value(token: str, fmt: FloatFormat) -> int:
    """Hex bit pattern (``0x3F80``) or a decimal rounded to ``fmt``."""
    t = token.strip()
    try:
        if t.lower().startswith(("0x", "-0x", "+0x")):
            if t.startswith(("-", "+")):
                raise ValueError
            bits = int(t, 16)
            if bits >= 1 << fmt.total_bits:
                raise ValueError
            return bits
        low = t.lower().lstrip("+-")
        if low in ("inf", "infinity"):
            return fmt.inf_bits(t.startswith("-"))
        if low == "nan":
            return fmt.qnan_bits
        q = Fraction(t)
    except (ValueError, ZeroDivisionError):
        raise ParseError(f"bad value token {token!r}") from None
    if q == 0:
        return int(t.startswith("-")) << (fmt.total_bits - 1)
    return round_fraction(q, fmt)


def parse_array(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        dims = int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad array spec {text!r}, expected RxC") from None
    if min(dims) < 1:
        raise argparse.ArgumentTypeError("array dimensions must be positive")
    return dims


def parse_int_set(text: str) -> list[int]:
    """``1,2,3`` or ``1-3``."""
    out = []
    try:
        for part in text.split(","):
            if "-" in part:
                lo, hi = part.split("-")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer range {text!r}") from None
    return out


def _format_arg(text: str) -> FloatFormat:
    try:
        return parse_format(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _norm_arg(text: str) -> NormMode:
    try:
        return NormMode.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def read_matrix(path: Path, fmt: FloatFormat) -> MatrixF:
    """Read a matrix file.

    Layout: optional ``#`` comment lines (``# schema_version=1 encoding=hex``),
    a ``rows,cols`` header, then one comma-separated line per row. Tokens are
    hex bit patterns or decimals; decimals are rounded nearest-even.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise ValidationError(f"cannot read {path}: {e.strerror}") from None
    body = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ValidationError(f"{path}: empty matrix file")
    try:
        rows, cols = (int(t) for t in body[0].split(","))
    except ValueError:
        raise ValidationError(f"{path}: header must be 'rows,cols', got {body[0]!r}") from None
    if len(body) - 1 != rows:
        raise ValidationError(f"{path}: header says {rows} rows, found {len(body) - 1}")
    bits = np.zeros((rows, cols), np.int64)
    for i, line in enumerate(body[1:]):
        toks = next(csv.reader([line]))
        if len(toks) != cols:
            raise ValidationError(f"{path}: row {i} has {len(toks)} entries, expected {cols}")
        for j, tok in enumerate(toks):
            try:
                bits[i, j] = parse_value(tok, fmt)
            except ParseError:
                raise ValidationError(f"{path}: element [{i}][{j}] {tok.strip()!r} "
                                      f"is not a {fmt} value") from None
    return MatrixF(bits, fmt)


def write_matrix(m: MatrixF, encoding: str = "hex") -> str:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION} format={m.fmt} encoding={encoding}\n")
    buf.write(f"{m.rows},{m.cols}\n")
    digits = (m.fmt.total_bits + 3) // 4
    for row in m.bits:
        if encoding == "hex":
            buf.write(",".join(f"0x{int(b):0{digits}X}" for b in row))
        else:
            buf.write(",".join(repr(to_float(int(b), m.fmt)) for b in row))
        buf.write("\n")
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------

def cmd_fma(args) -> int:
    fmt, cfg = args.format, PEConfig(args.format, args.norm)
    a_bits, b_bits, c_bits = (parse_value(t, fmt) for t in (args.a, args.b, args.c))
    c = InternalSum.from_value(decode(c_bits, fmt), cfg.acc_sig_bits)
    s, t = pe_fma(decode(a_bits, fmt), decode(b_bits, fmt), c, cfg)
    bits = south_round(s, fmt)
    digits = (fmt.total_bits + 3) // 4
    result = {
        "format": str(fmt), "norm": str(args.norm),
        "a": f"0x{a_bits:0{digits}X}", "b": f"0x{b_bits:0{digits}X}",
        "c": f"0x{c_bits:0{digits}X}",
        "out": f"0x{bits:0{digits}X}", "value": repr(to_float(bits, fmt)),
        "class": s.cls.name.lower(),
        "sum_exponent": s.exponent, "sum_significand": f"0x{s.significand:0{(cfg.acc_sig_bits + 3) // 4}X}",
        "effective_op": t.effective_op.value if t.effective_op else "special",
        "exp_diff": t.exp_diff, "carry_right_shift": t.carry_right_shift,
        "accurate_shift": t.accurate_shift, "applied_shift": t.applied_shift,
        "unnormalized": t.unnormalized,
    }
    if args.json:
        _emit(json.dumps(result, indent=2) + "\n", args.out)
    else:
        _emit("".join(f"{k}={v}\n" for k, v in result.items()), args.out)
    return EXIT_OK


def cmd_matmul(args) -> int:
    fmt = args.format
    x = read_matrix(args.x, fmt)
    w = read_matrix(args.w, fmt)
    if x.cols != w.rows:
        raise ValidationError(f"shape mismatch: {x.rows}x{x.cols} @ {w.rows}x{w.cols}")
    rows, cols = args.array
    rep = matmul(x, w, ArrayConfig(rows, cols, PEConfig(fmt, args.norm)), trace=args.trace)
    _emit(write_matrix(rep.output, args.encoding), args.out)
    h = rep.stats
    summary = {"format": str(fmt), "norm": str(args.norm), "array": f"{rows}x{cols}",
               "shape": f"{rep.output.rows}x{rep.output.cols}", "events": h.total,
               "unnormalized": h.unnormalized_events, "short_shift": h.short_events}
    stream = sys.stderr if not args.out else sys.stdout
    stream.write(" ".join(f"{k}={v}" for k, v in summary.items()) + "\n")
    if args.trace:
        hist_path = args.hist_out or (f"{args.out}.hist.json" if args.out else None)
        doc = json.dumps(h.to_dict(), indent=2) + "\n"
        if hist_path:
            Path(hist_path).write_text(doc)
        else:
            sys.stderr.write(doc)
    return EXIT_OK


def _hist_csv(hists: list[tuple[str, ShiftHistogram]]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["schema_version", "matmul", "bin", "count", "fraction"])
    for name, h in hists:
        for label, n in h.to_dict()["needed"].items():
            wr.writerow([SCHEMA_VERSION, name, label, n, f"{n / h.total:.6g}" if h.total else 0])
    return buf.getvalue()


def cmd_hist(args) -> int:
    rows, cols = args.array
    cfg = ArrayConfig(rows, cols, PEConfig(args.format, args.norm))
    wl = attention_workload(args.seq_len, args.d_model, args.seed, args.format)
    reports = wl.run(cfg)
    names = ["qk", "pv", "proj"]
    total = reports[0].stats
    for r in reports[1:]:
        total = total.merge(r.stats)
    hists = list(zip(names, (r.stats for r in reports))) + [("all", total)]
    if args.out and args.out.endswith(".csv"):
        _emit(_hist_csv(hists), args.out)
    else:
        doc = {"schema_version": SCHEMA_VERSION, "format": str(args.format),
               "norm": str(args.norm), "seq_len": args.seq_len, "d_model": args.d_model,
               "seed": args.seed, "fraction_shift_le_3": total.fraction_at_most(3),
               "histograms": {n: h.to_dict() for n, h in hists}}
        _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    suite = gaussian_suite(args.instances, args.size, args.seed, args.format)
    rows, cols = args.array
    table = sweep(args.k, args.lam, suite, args.ref, rows, cols, include_accurate=True)
    fields = ["label", "k", "lambda", "mean_abs_rel_error", "max_abs_rel_error",
              "mismatch_rate", "nan_inf_disagreements", "unnormalized_rate",
              "short_shift_events", "events"]
    recs = [{"label": r.label, "k": r.k or "", "lambda": r.lam or "",
             "mean_abs_rel_error": r.error.mean_abs_rel_error,
             "max_abs_rel_error": r.error.max_abs_rel_error,
             "mismatch_rate": r.error.mismatch_rate,
             "nan_inf_disagreements": r.error.nan_inf_disagreements,
             "unnormalized_rate": r.hist.unnormalized_rate,
             "short_shift_events": r.hist.short_events, "events": r.hist.total}
            for r in table]
    if args.out and args.out.endswith(".json"):
        _emit(json.dumps({"schema_version": SCHEMA_VERSION, "ref": args.ref,
                          "instances": args.instances, "size": args.size, "seed": args.seed,
                          "rows": recs}, indent=2) + "\n", args.out)
    else:
        buf = io.StringIO()
        wr = csv.DictWriter(buf, ["schema_version"] + fields, lineterminator="\n")
        wr.writeheader()
        for rec in recs:
            wr.writerow({"schema_version": SCHEMA_VERSION, **rec})
        _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    fmt = args.format
    cfg = PEConfig(fmt)
    if cfg.acc_sig_bits > 18:
        raise ValidationError(f"exhaustive checks need an accumulator of at most 18 bits, "
                              f"{fmt} has {cfg.acc_sig_bits}")
    failed = False

    viol = check_shift_dominance(cfg.acc_sig_bits)
    print(f"shift-dominance: {'PASS' if not viol else 'FAIL'}")
    for v in viol:
        print(f"  {v.detail}")
    failed |= bool(viol)

    res = check_accurate_sweep(fmt)
    print(f"accurate-vs-exact: {'PASS' if not res.mismatches else 'FAIL'} ({res.cases} cases)")
    print(f"like-sign-no-left-shift: {'PASS' if not res.like_sign_violations else 'FAIL'}")
    print(f"far-unlike-single-zero: {'PASS' if not res.far_unlike_violations else 'FAIL'}")
    print(f"scalar-vs-batch: {'PASS' if not res.scalar_mismatches else 'FAIL'} "
          f"({res.scalar_checked} cases)")
    for msg in res.mismatches + res.like_sign_violations + res.far_unlike_violations \
            + res.scalar_mismatches:
        print(f"  {msg}")
    failed |= not res.ok

    rng = random.Random(args.seed)
    bad = []
    for _ in range(args.chains):
        s, exact = InternalSum.zero(cfg.acc_sig_bits), Fraction(0)
        for _ in range(256):
            a = decode(round_fraction(Fraction(rng.gauss(0, 1)), fmt), fmt)
            b = decode(round_fraction(Fraction(rng.gauss(0, 1)), fmt), fmt)
            s, _t = pe_fma(a, b, s, cfg)
            exact = replay_accurate_fma(a, b, exact, cfg.acc_sig_bits)
            if s.to_exact().to_fraction() != exact:
                bad.append(f"chain diverged at a={a} b={b}")
                break
    print(f"fma-chains: {'PASS' if not bad else 'FAIL'} ({args.chains} chains of 256)")
    for msg in bad[:20]:
        print(f"  {msg}")
    failed |= bool(bad)
    return EXIT_PROPERTY if failed else EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", type=_format_arg, default=parse_format("bf16"),
                        help="fp32, bf16, e4m3, e5m2 or custom:E,M (default bf16)")
    common.add_argument("--norm", type=_norm_arg, default=NormMode(),
                        help="accurate or an-K-L (default accurate)")
    common.add_argument("--array", type=parse_array, default=(8, 8), metavar="RxC",
                        help="systolic array dimensions (default 8x8)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trace", action="store_true", help="record per-FMA traces")
    common.add_argument("--out", default=None, metavar="PATH")

    p = argparse.ArgumentParser(prog="approxnorm", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fma", parents=[common], help="one PE multiply-add")
    f.add_argument("a")
    f.add_argument("b")
    f.add_argument("c")
    f.add_argument("--json", action="store_true")
    f.set_defaults(func=cmd_fma)

    m = sub.add_parser("matmul", parents=[common], help="emulate a matrix product")
    m.add_argument("x", type=Path)
    m.add_argument("w", type=Path)
    m.add_argument("--encoding", choices=("hex", "decimal"), default="hex")
    m.add_argument("--hist-out", default=None, metavar="PATH")
    m.set_defaults(func=cmd_matmul)

    h = sub.add_parser("hist", parents=[common], help="shift histogram of an attention workload")
    h.add_argument("--seq-len", type=int, default=64)
    h.add_argument("--d-model", type=int, default=64)
    h.set_defaults(func=cmd_hist)

    s = sub.add_parser("sweep", parents=[common], help="(k, lambda) design-space sweep")
    s.add_argument("--k", type=parse_int_set, default=[1, 2])
    s.add_argument("--lambda", dest="lam", type=parse_int_set, default=[1, 2])
    s.add_argument("--instances", type=int, default=10)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--ref", choices=("exact", "accurate"), default="exact")
    s.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle-check", parents=[common], help="run the exhaustive property checks")
    o.add_argument("--chains", type=int, default=20)
    o.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
