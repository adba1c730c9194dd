"""Command-line front end.

    scvm asm <src> -o <img>          assemble to an image file
    scvm run <img> [flags]           bare run, no analysis
    scvm check <img> [flags]         run with shadow state + checkers
    scvm corpus [dir]                run every corpus entry, diff, tally

Exit statuses
    asm:    0 ok, 1 assembly error, 2 I/O failure
    run:    0 clean halt, 2 bad config, 4 guest fault or timeout
    check:  0 no warnings, 2 bad config, 3 warnings written,
            4 guest fault or timeout (report still written)
    corpus: 0 all entries PASS, 1 some FAIL, 2 malformed manifest
"""

from __future__ import annotations

import argparse
import sys

from .asm import AsmError, ImageError, assemble, read_image, write_image
from .checkers import CHECKER_ORDER
from .corpus import run_corpus
from .driver import RunConfig, analyze
from .machine import (
    DEFAULT_STEP_LIMIT,
    ROUND_ROBIN,
    SEEDED_RANDOM,
    SchedulerPolicy,
    format_event,
)
from .report import ManifestError, serialize


class _ConfigError(Exception):
    pass


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("image", help="image file produced by `scvm asm`")
    p.add_argument("--sched", choices=[ROUND_ROBIN, SEEDED_RANDOM], default=ROUND_ROBIN)
    p.add_argument("--seed", type=int, default=0, help="scheduler / input seed")
    p.add_argument("--quantum", type=int, default=1, help="instructions per scheduler slice")
    p.add_argument("--steps", type=int, default=DEFAULT_STEP_LIMIT, help="step limit")
    p.add_argument(
        "--trace",
        action="append",
        choices=["events", "shadow"],
        default=None,
        help="dump a trace to stdout (repeatable)",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scvm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_asm = sub.add_parser("asm", help="assemble source to an image")
    p_asm.add_argument("source")
    p_asm.add_argument("-o", "--output", required=True)

    p_run = sub.add_parser("run", help="run an image without analysis")
    _add_run_flags(p_run)

    p_check = sub.add_parser("check", help="run an image with checkers")
    _add_run_flags(p_check)
    p_check.add_argument(
        "--checkers",
        default=",".join(CHECKER_ORDER),
        help="comma-separated checker names; empty string disables all",
    )
    p_check.add_argument("--report", default=None, help="report path (default stdout)")
    p_check.add_argument(
        "--opt",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="checker option, e.g. lockset.tracked=all",
    )

    p_corpus = sub.add_parser("corpus", help="assemble, check and diff corpus entries")
    p_corpus.add_argument(
        "directory", nargs="?", default=None, help="corpus directory (default: shipped)"
    )
    return parser


def _policy_from(args) -> SchedulerPolicy:
    try:
        return SchedulerPolicy(kind=args.sched, quantum=args.quantum, seed=args.seed)
    except ValueError as exc:
        raise _ConfigError(str(exc)) from None


def _load_image(path):
    try:
        return read_image(path)
    except (OSError, ImageError) as exc:
        raise _ConfigError(f"cannot load image {path}: {exc}") from None


def _cmd_asm(args) -> int:
    try:
        source = open(args.source, encoding="utf-8").read()
    except OSError as exc:
        print(f"scvm asm: {exc}", file=sys.stderr)
        return 2
    try:
        image = assemble(source)
    except AsmError as exc:
        print(f"{args.source}: {exc}", file=sys.stderr)
        return 1
    try:
        write_image(image, args.output)
    except OSError as exc:
        print(f"scvm asm: {exc}", file=sys.stderr)
        return 2
    return 0


def _run_common(args, checker_names, checker_options):
    """Shared by run/check: returns (AnalysisResult, trace kinds)."""
    trace = tuple(args.trace or ())
    image = _load_image(args.image)
    if args.steps < 1:
        raise _ConfigError("--steps must be >= 1")
    try:
        config = RunConfig(
            checkers=tuple(checker_names),
            policy=_policy_from(args),
            step_limit=args.steps,
            checker_options=checker_options,
            shadow_trace="shadow" in trace,
        )
        result = analyze(image, config)
    except ValueError as exc:
        raise _ConfigError(str(exc)) from None
    return result, trace


def _print_traces(result, trace):
    if "events" in trace and result.events is not None:
        for e in result.events:
            print(format_event(e))
    if "shadow" in trace and result.shadow.trace is not None:
        for line in result.shadow.trace:
            print(line)


def _outcome_status(result) -> int:
    if result.outcome != "halt":
        print(f"scvm: {result.outcome}: {result.state.fault or 'step limit reached'}",
              file=sys.stderr)
        return 4
    return 0


def _cmd_run(args) -> int:
    args_trace = tuple(args.trace or ())
    # collect events only when we need to print them back out
    image = _load_image(args.image)
    if args.steps < 1:
        raise _ConfigError("--steps must be >= 1")
    config = RunConfig(
        checkers=(),
        policy=_policy_from(args),
        step_limit=args.steps,
        collect_events="events" in args_trace,
    )
    result = analyze(image, config)
    _print_traces(result, args_trace)
    return _outcome_status(result)


def _cmd_check(args) -> int:
    names = tuple(n for n in args.checkers.split(",") if n)
    options = {}
    for pair in args.opt:
        key, sep, value = pair.partition("=")
        if not sep:
            raise _ConfigError(f"--opt expects KEY=VALUE, got {pair!r}")
        options[key] = value
    args_trace = tuple(args.trace or ())
    image = _load_image(args.image)
    if args.steps < 1:
        raise _ConfigError("--steps must be >= 1")
    try:
        config = RunConfig(
            checkers=names,
            policy=_policy_from(args),
            step_limit=args.steps,
            checker_options=options,
            collect_events="events" in args_trace,
            shadow_trace="shadow" in args_trace,
        )
        result = analyze(image, config)
    except ValueError as exc:
        raise _ConfigError(str(exc)) from None
    _print_traces(result, args_trace)
    report = serialize(result.warnings, result.image_sha256, config.policy)
    if args.report:
        try:
            with open(args.report, "w", encoding="utf-8") as fh:
                fh.write(report)
        except OSError as exc:
            raise _ConfigError(f"cannot write report: {exc}") from None
    else:
        sys.stdout.write(report)
    status = _outcome_status(result)
    if status:
        return status
    return 3 if result.warnings else 0


def _cmd_corpus(args) -> int:
    try:
        result = run_corpus(args.directory)
    except ManifestError as exc:
        print(f"scvm corpus: {exc}", file=sys.stderr)
        return 2
    except AsmError as exc:
        print(f"scvm corpus: {exc}", file=sys.stderr)
        return 2
    print(result.format_table())
    return 0 if result.all_passed else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {
        "asm": _cmd_asm,
        "run": _cmd_run,
        "check": _cmd_check,
        "corpus": _cmd_corpus,
    }[args.command]
    try:
        return handler(args)
    except _ConfigError as exc:
        print(f"scvm {args.command}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
