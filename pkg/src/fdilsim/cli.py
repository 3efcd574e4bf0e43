"""Command-line entry points.

Subcommands::

    fdilsim run <config> [--out DIR]
    fdilsim sweep <config> --lambda 0,0.25,0.5 [--out DIR]
    fdilsim verify <run-dir>
    fdilsim compare <run-dir-a> <run-dir-b>

Exit codes: 0 success, 1 usage/config error, 2 invariant violation
(verify failures or compare differences), 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, parse_config_text, serialize_config, with_lambda
from .experiment import run_experiment
from .metrics import acc, bwt
from .runio import compare_runlogs, emit_runlog, fmt, verify_runlog

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2
EXIT_IO = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="fdilsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full experiment")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="override [io] output_dir")

    p_sweep = sub.add_parser("sweep", help="run the config once per lambda value")
    p_sweep.add_argument("config")
    p_sweep.add_argument(
        "--lambda", dest="lambdas", required=True, help="comma-separated lambda grid"
    )
    p_sweep.add_argument("--out", default=None, help="override [io] output_dir")

    p_verify = sub.add_parser("verify", help="recompute metrics and bounds of a run")
    p_verify.add_argument("run_dir")

    p_compare = sub.add_parser("compare", help="bit-level diff of two run directories")
    p_compare.add_argument("run_dir_a")
    p_compare.add_argument("run_dir_b")
    return parser


def _read_text(path: str) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _cmd_run(args) -> int:
    text = _read_text(args.config)
    artifacts = run_experiment(text)
    out_dir = args.out if args.out else artifacts.config.output_dir
    emit_runlog(artifacts, out_dir)
    matrix = artifacts.log.accuracy
    line = f"run complete: {out_dir} acc={fmt(acc(matrix))}"
    if matrix.num_tasks >= 2:
        line += f" bwt={fmt(bwt(matrix))}"
    print(line)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    text = _read_text(args.config)
    base = parse_config_text(text)
    try:
        grid = [float(v) for v in args.lambdas.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise _UsageError(f"bad --lambda list: {exc}") from exc
    if not grid:
        raise _UsageError("empty --lambda list")

    root = args.out if args.out else base.output_dir
    lines = ["lambda,acc,bwt"]
    for lam in grid:
        if lam < 0:
            raise _UsageError("lambda values must be >= 0")
        sub_dir = os.path.join(root, f"lambda_{fmt(lam)}")
        effective = serialize_config(with_lambda(base, lam, sub_dir))
        artifacts = run_experiment(effective)
        emit_runlog(artifacts, sub_dir)
        matrix = artifacts.log.accuracy
        bwt_text = fmt(bwt(matrix)) if matrix.num_tasks >= 2 else ""
        lines.append(f"{fmt(lam)},{fmt(acc(matrix))},{bwt_text}")
        print(f"lambda={fmt(lam)}: acc={fmt(acc(matrix))} bwt={bwt_text}")
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "sweep_summary.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def _cmd_verify(args) -> int:
    try:
        violations = verify_runlog(args.run_dir)
    except (ValueError, KeyError, IndexError) as exc:
        # Malformed or tampered run files are invariant violations, not crashes.
        print(f"VIOLATION: run files unreadable as a valid log: {exc}")
        return EXIT_VIOLATION
    if violations:
        for violation in violations:
            print(f"VIOLATION: {violation}")
        return EXIT_VIOLATION
    print("verify ok")
    return EXIT_OK


def _cmd_compare(args) -> int:
    differing = compare_runlogs(args.run_dir_a, args.run_dir_b)
    if differing:
        for name in differing:
            print(f"DIFFERS: {name}")
        return EXIT_VIOLATION
    print("identical")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = _build_parser().parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_compare(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FileNotFoundError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
