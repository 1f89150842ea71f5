"""Command-line interface: ``retrofit validate|analyze|select MODEL``.

Reports go to stdout (or ``--output FILE``); findings and diagnostics for
``analyze`` and ``select`` go to stderr. Exit codes: 0 success, 1 validation
errors, 2 usage or I/O error, 3 infeasible selection.
"""

from __future__ import annotations

import argparse
import enum
import sys
from fractions import Fraction
from typing import List, Optional, Sequence

from .ingest import Finding, ModelError, Severity, has_errors, load_model
from .reporting import RenderFormat, decimal4, rational, render_report
from .risk import analyze
from .selection import Assurance, Budget, Infeasible, whatif


class ExitCode(enum.IntEnum):
    OK = 0
    INVALID = 1
    USAGE = 2
    INFEASIBLE = 3


class _UsageError(Exception):
    pass


def _money_arg(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer amount in minor units, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("budget must be >= 0")
    return value


def _rational_arg(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a rational such as 7, 7/2 or 0.25, got {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("max residual must be >= 0")
    return value


def _ids_arg(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _add_global_flags(parser: argparse.ArgumentParser, default) -> None:
    # Subparsers use SUPPRESS so flags given before the command are not overwritten.
    parser.add_argument("--format", choices=[f.value for f in RenderFormat],
                        default=default if default is argparse.SUPPRESS else "text",
                        help="output format (default: text)")
    parser.add_argument("--output", metavar="FILE", default=default if default is argparse.SUPPRESS else None,
                        help="write the report to FILE instead of stdout")
    parser.add_argument("--strict", action="store_true",
                        default=default if default is argparse.SUPPRESS else False,
                        help="treat warnings as errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retrofit",
        description="Threat-tree risk analysis and countermeasure selection.",
    )
    _add_global_flags(parser, None)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("validate", help="check a model file and list findings")
    p.add_argument("model", help="path to the model JSON file")
    _add_global_flags(p, argparse.SUPPRESS)

    p = sub.add_parser("analyze", help="score, classify and roll up threats")
    p.add_argument("model", help="path to the model JSON file")
    _add_global_flags(p, argparse.SUPPRESS)

    p = sub.add_parser("select", help="choose countermeasures under a budget or residual ceiling")
    p.add_argument("model", help="path to the model JSON file")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--budget", type=_money_arg, metavar="N",
                      help="maximize mitigated risk with total cost <= N minor units")
    mode.add_argument("--max-residual", type=_rational_arg, metavar="Q",
                      help="minimize cost with residual risk <= Q (e.g. 7, 7/2, 0.25)")
    p.add_argument("--assume", type=_ids_arg, default=[], metavar="ID,...",
                   help="countermeasures already implemented (cost nothing, not re-selected)")
    p.add_argument("--greedy", action="store_true", help="use the greedy solver (budget mode only)")
    _add_global_flags(p, argparse.SUPPRESS)
    return parser


def _write(data: bytes, stream) -> None:
    buf = getattr(stream, "buffer", None)
    if buf is not None:
        stream.flush()
        buf.write(data)
        buf.flush()
    else:
        stream.write(data.decode("utf-8"))


def _emit(args, data: bytes) -> None:
    if args.output:
        try:
            with open(args.output, "wb") as fh:
                fh.write(data)
        except OSError as exc:
            raise _UsageError(f"cannot write {args.output}: {exc.strerror}")
    else:
        _write(data, sys.stdout)


def _diagnose(findings: Sequence[Finding]) -> None:
    if findings:
        _write(render_report(findings, RenderFormat.TEXT), sys.stderr)


def _promote(findings: Sequence[Finding], strict: bool) -> List[Finding]:
    if not strict:
        return list(findings)
    return [Finding(Severity.ERROR, f.code, f.message, f.location) for f in findings]


def _read_model(args):
    try:
        with open(args.model, "rb") as fh:
            document = fh.read()
    except OSError as exc:
        raise _UsageError(f"cannot read {args.model}: {exc.strerror}")
    model, findings = load_model(document)
    return model, _promote(findings, args.strict)


def cmd_validate(args) -> int:
    _, findings = _read_model(args)
    _emit(args, render_report(findings, args.format))
    return ExitCode.INVALID if has_errors(findings) else ExitCode.OK


def cmd_analyze(args) -> int:
    model, findings = _read_model(args)
    _diagnose(findings)
    if model is None or has_errors(findings):
        return ExitCode.INVALID
    _emit(args, render_report(analyze(model), args.format))
    return ExitCode.OK


def cmd_select(args) -> int:
    if args.greedy and args.budget is None:
        raise _UsageError("--greedy applies to --budget only")
    model, findings = _read_model(args)
    _diagnose(findings)
    if model is None or has_errors(findings):
        return ExitCode.INVALID
    mode = Budget(args.budget) if args.budget is not None else Assurance(args.max_residual)
    try:
        plan = whatif(model, args.assume, mode, greedy=args.greedy)
    except ModelError as exc:
        _diagnose(exc.findings)
        return ExitCode.USAGE
    except Infeasible as exc:
        _write(
            (f"INFEASIBLE max residual {rational(exc.max_residual)} cannot be reached; "
             f"best achievable residual {decimal4(exc.best_residual)} ({rational(exc.best_residual)}) "
             f"with all of: {', '.join(exc.best_set) or 'none'}\n").encode("utf-8"),
            sys.stderr,
        )
        return ExitCode.INFEASIBLE
    _emit(args, render_report(plan, args.format))
    return ExitCode.OK


_COMMANDS = {"validate": cmd_validate, "analyze": cmd_analyze, "select": cmd_select}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return int(_COMMANDS[args.command](args))
    except _UsageError as exc:
        _write(f"retrofit: error: {exc}\n".encode("utf-8"), sys.stderr)
        return ExitCode.USAGE


if __name__ == "__main__":
    sys.exit(main())
