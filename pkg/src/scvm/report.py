"""Warning reports, expected-warning manifests, and their diff.

Report format: UTF-8, tab-separated, "#"-prefixed header lines carrying
run metadata, then one line per warning:

    rule  checker  step  tid  pc(hex)  address(hex or -)  object(or -)  detail

The detail field is backslash-escaped (\\t, \\n, \\r, \\\\) so a report
always round-trips through parse().

Manifest format, line-oriented:

    program <name>                     (optional, informational)
    policy <kind> seed <n> quantum <n>
    expect <RULE> at <label> [false-positive]

Blank lines and "#" comments are ignored.  The false-positive marker
documents a warning the checker is expected to emit even though the
program is actually fine; diffing treats it as expected either way, the
corpus tally reports it separately.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .checkers import ALL_RULES, Warning
from .machine import ROUND_ROBIN, SEEDED_RANDOM, SchedulerPolicy

REPORT_VERSION = "scvm-report v1"


class ReportError(ValueError):
    """Malformed report text."""


class ManifestError(ValueError):
    """Malformed manifest text or unresolvable site label."""


def _escape(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            if nxt == "t":
                out.append("\t")
            elif nxt == "n":
                out.append("\n")
            elif nxt == "r":
                out.append("\r")
            elif nxt == "\\":
                out.append("\\")
            else:
                raise ReportError(f"bad escape \\{nxt}")
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _opt_hex(value: int | None) -> str:
    return f"0x{value:04X}" if value is not None else "-"


def _opt_int(value: int | None) -> str:
    return str(value) if value is not None else "-"


def serialize(warnings, image_sha256: str, policy: SchedulerPolicy) -> str:
    """Stable text report; byte-identical for identical runs."""
    lines = [
        f"# {REPORT_VERSION}",
        f"# image sha256 {image_sha256}",
        f"# policy {policy.kind} seed {policy.seed} quantum {policy.quantum}",
    ]
    for w in warnings:
        lines.append(
            "\t".join(
                [
                    w.rule,
                    w.checker,
                    str(w.step),
                    str(w.tid),
                    f"0x{w.pc:04X}",
                    _opt_hex(w.address),
                    _opt_int(w.object_id),
                    _escape(w.detail),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def parse(text: str) -> tuple[dict, list]:
    """Inverse of serialize: (metadata dict, Warning list)."""
    meta: dict = {}
    warnings: list = []
    # rows are "\n"-separated; splitlines would also split on stray
    # unicode separators inside detail text
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("image sha256 "):
                meta["image_sha256"] = body.split()[-1]
            elif body.startswith("policy "):
                parts = body.split()
                meta["policy"] = SchedulerPolicy(
                    kind=parts[1], seed=int(parts[3]), quantum=int(parts[5])
                )
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise ReportError(f"line {lineno}: expected 8 fields, got {len(fields)}")
        rule, checker, step, tid, pc, address, object_id, detail = fields
        warnings.append(
            Warning(
                checker=checker,
                rule=rule,
                tid=int(tid),
                pc=int(pc, 16),
                step=int(step),
                address=None if address == "-" else int(address, 16),
                object_id=None if object_id == "-" else int(object_id),
                detail=_unescape(detail),
            )
        )
    return meta, warnings


@dataclass(frozen=True)
class Expectation:
    rule: str
    label: str
    false_positive: bool = False


@dataclass
class Manifest:
    program: str | None = None
    policy: SchedulerPolicy = field(default_factory=SchedulerPolicy)
    expects: list = field(default_factory=list)


def parse_manifest(text: str, source: str = "<manifest>") -> Manifest:
    manifest = Manifest()
    saw_policy = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        parts = line.split()
        if parts[0] == "program" and len(parts) == 2:
            manifest.program = parts[1]
        elif parts[0] == "policy":
            if len(parts) != 6 or parts[2] != "seed" or parts[4] != "quantum":
                raise ManifestError(f"{where}: expected 'policy <kind> seed <n> quantum <n>'")
            if parts[1] not in (ROUND_ROBIN, SEEDED_RANDOM):
                raise ManifestError(f"{where}: unknown policy kind {parts[1]!r}")
            try:
                manifest.policy = SchedulerPolicy(
                    kind=parts[1], seed=int(parts[3]), quantum=int(parts[5])
                )
            except ValueError as exc:
                raise ManifestError(f"{where}: {exc}") from None
            saw_policy = True
        elif parts[0] == "expect":
            fp = False
            if parts[-1] == "false-positive":
                fp = True
                parts = parts[:-1]
            if len(parts) != 4 or parts[2] != "at":
                raise ManifestError(f"{where}: expected 'expect <RULE> at <label>'")
            if parts[1] not in ALL_RULES:
                raise ManifestError(f"{where}: unknown rule {parts[1]!r}")
            manifest.expects.append(Expectation(parts[1], parts[3], fp))
        else:
            raise ManifestError(f"{where}: unrecognized directive {parts[0]!r}")
    if not saw_policy:
        raise ManifestError(f"{source}: missing 'policy' line")
    return manifest


@dataclass(frozen=True)
class Verdict:
    passed: bool
    missing: tuple  # expected (rule, pc) pairs not observed
    unexpected: tuple  # observed (rule, pc) pairs not expected

    def __str__(self):
        if self.passed:
            return "PASS"
        bits = []
        if self.missing:
            bits.append(
                "missing " + ", ".join(f"{r}@0x{pc:04X}" for r, pc in self.missing)
            )
        if self.unexpected:
            bits.append(
                "unexpected " + ", ".join(f"{r}@0x{pc:04X}" for r, pc in self.unexpected)
            )
        return "FAIL: " + "; ".join(bits)


def diff(warnings, manifest: Manifest, symbols: dict) -> Verdict:
    """Multiset comparison of (rule, site pc) between a run's warnings
    and the manifest's expectations (labels resolved via symbols)."""
    expected: Counter = Counter()
    for exp in manifest.expects:
        if exp.label not in symbols:
            raise ManifestError(f"expect site label {exp.label!r} not in symbol table")
        expected[(exp.rule, symbols[exp.label])] += 1
    observed = Counter((w.rule, w.pc) for w in warnings)
    missing = tuple(sorted((expected - observed).elements()))
    unexpected = tuple(sorted((observed - expected).elements()))
    return Verdict(passed=not missing and not unexpected, missing=missing, unexpected=unexpected)
