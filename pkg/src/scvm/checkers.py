"""Checker plugins: rule violations observed over the event stream.

Each plugin sees every machine event plus read-only views of the
machine and shadow state, and yields Warnings.  Plugins never mutate
either view, so enabling or disabling checkers cannot change a run.

Shipped checkers:
    null     NULL_DEREF_UNCHECKED   allocation/descriptor dereferenced
                                    with no null compare on record
    user     USER_READ_UNCHECKED, USER_WRITE_UNCHECKED, USER_DEREF_IRQOFF
                                    user-supplied addresses touched in
                                    kernel mode without the matching
                                    check, or with interrupts disabled
    fmt      FMT_TAINTED            network-derived bytes reaching a
                                    format-string argument
    lockset  RACE_EMPTY_LOCKSET     no single lock protects a shared
                                    word across all observed accesses
"""

from __future__ import annotations

from dataclasses import dataclass

from .isa import MEMORY_SIZE
from .machine import HEAP_BASE, HEAP_LIMIT, MODE_KERNEL, SYS_PRINTF, Event, Machine
from .shadow import NULLABLE_TAGS, ShadowState, TagKind

RULE_NULL_DEREF = "NULL_DEREF_UNCHECKED"
RULE_USER_READ = "USER_READ_UNCHECKED"
RULE_USER_WRITE = "USER_WRITE_UNCHECKED"
RULE_USER_IRQOFF = "USER_DEREF_IRQOFF"
RULE_FMT_TAINTED = "FMT_TAINTED"
RULE_RACE = "RACE_EMPTY_LOCKSET"

ALL_RULES = (
    RULE_NULL_DEREF,
    RULE_USER_READ,
    RULE_USER_WRITE,
    RULE_USER_IRQOFF,
    RULE_FMT_TAINTED,
    RULE_RACE,
)

FMT_SCAN_CAP = 4096

_MEM_KINDS = ("mem-read", "mem-write")


@dataclass(frozen=True)
class Warning:
    checker: str
    rule: str
    tid: int
    pc: int
    step: int
    address: int | None = None
    object_id: int | None = None
    detail: str = ""

    @property
    def dedup_key(self):
        ident = self.object_id if self.object_id is not None else self.address
        return (self.rule, self.pc, ident)


class CheckerRegistry:
    """Fans events out to plugins in registration order and collects
    warnings, dropping any repeat of an already-seen dedup key."""

    def __init__(self, plugins):
        self.plugins = list(plugins)
        self.warnings: list = []
        self._seen: set = set()

    def reset(self):
        self.warnings.clear()
        self._seen.clear()
        for p in self.plugins:
            p.reset()

    def dispatch(self, event: Event) -> None:
        for plugin in self.plugins:
            for w in plugin.on_event(event):
                key = w.dedup_key
                if key not in self._seen:
                    self._seen.add(key)
                    self.warnings.append(w)


def run_checkers(plugins, events) -> list:
    """Deliver a complete event stream through a fresh registry."""
    registry = CheckerRegistry(plugins)
    registry.reset()
    for e in events:
        registry.dispatch(e)
    return registry.warnings


class NullChecker:
    """An ALLOC/OPEN result must see a compare against zero (through
    any alias) before the first dereference through it."""

    name = "null"

    def __init__(self, machine: Machine | None, shadow: ShadowState):
        self.shadow = shadow

    def reset(self):
        pass

    def on_event(self, e: Event):
        if e.kind not in _MEM_KINDS or e.base_reg is None:
            return
        obj = self.shadow.reg_object(e.tid, e.base_reg)
        if obj.tags & NULLABLE_TAGS and TagKind.NULL_CHECKED not in obj.tags:
            kind = "ALLOC" if TagKind.ALLOC_UNCHECKED in obj.tags else "OPEN"
            yield Warning(
                checker=self.name,
                rule=RULE_NULL_DEREF,
                tid=e.tid,
                pc=e.pc,
                step=e.step,
                address=e.addr,
                object_id=obj.id,
                detail=f"{kind} result dereferenced without null check ({obj.note})",
            )


class UserChecker:
    """User-supplied addresses dereferenced in kernel mode must have
    passed the matching access check; no user dereference at all is
    allowed while interrupts are disabled (checked or not)."""

    name = "user"

    def __init__(self, machine: Machine | None, shadow: ShadowState):
        self.shadow = shadow

    def reset(self):
        pass

    def on_event(self, e: Event):
        if e.kind not in _MEM_KINDS or e.base_reg is None or e.mode != MODE_KERNEL:
            return
        obj = self.shadow.reg_object(e.tid, e.base_reg)
        if TagKind.USER_UNCHECKED not in obj.tags:
            return
        common = dict(
            checker=self.name, tid=e.tid, pc=e.pc, step=e.step,
            address=e.addr, object_id=obj.id,
        )
        if not e.iflag:
            yield Warning(
                rule=RULE_USER_IRQOFF,
                detail="user address dereferenced with interrupts disabled",
                **common,
            )
        if e.kind == "mem-read" and TagKind.USER_READ_CHECKED not in obj.tags:
            yield Warning(
                rule=RULE_USER_READ,
                detail="user address read in kernel without read check",
                **common,
            )
        elif e.kind == "mem-write" and TagKind.USER_WRITE_CHECKED not in obj.tags:
            yield Warning(
                rule=RULE_USER_WRITE,
                detail="user address written in kernel without write check",
                **common,
            )


class FmtChecker:
    """Format strings must not contain bytes derived from an untrusted
    source.  Scans the guest string at each PRINTF."""

    name = "fmt"

    def __init__(self, machine: Machine, shadow: ShadowState):
        self.machine = machine
        self.shadow = shadow

    def reset(self):
        pass

    def on_event(self, e: Event):
        if e.kind != "syscall" or e.sysno != SYS_PRINTF:
            return
        addr = e.args[0]
        first_tainted = None
        tainted_obj = None
        terminated = False
        a = addr
        while a < MEMORY_SIZE and a - addr < FMT_SCAN_CAP:
            if self.machine.state.memory[a] == 0:
                terminated = True
                break
            if first_tainted is None:
                obj = self.shadow.mem_object(a)
                if TagKind.TAINTED in obj.tags:
                    first_tainted = a
                    tainted_obj = obj
            a += 1
        if first_tainted is None:
            return
        detail = f"tainted byte at format offset {first_tainted - addr} ({tainted_obj.note})"
        if not terminated:
            detail += f"; no NUL within {FMT_SCAN_CAP} bytes, scan truncated"
        yield Warning(
            checker=self.name,
            rule=RULE_FMT_TAINTED,
            tid=e.tid,
            pc=e.pc,
            step=e.step,
            address=first_tainted,
            object_id=tainted_obj.id,
            detail=detail,
        )


class _Universal:
    """Lockset lattice top: the set of all locks."""

    def __repr__(self):
        return "UNIVERSAL"

    def __and__(self, other):
        return set(other)

    def __rand__(self, other):
        return set(other)


UNIVERSAL = _Universal()


class LocksetTable:
    """Per tracked word: the intersection of lock sets held across all
    accesses so far, plus the set of words already reported."""

    def __init__(self):
        self.locksets: dict = {}
        self.reported: set = set()

    def access(self, word: int, held) -> bool:
        """Intersect; True when the lockset newly became empty."""
        cur = self.locksets.get(word, UNIVERSAL)
        new = cur & held
        self.locksets[word] = new
        if not new and word not in self.reported:
            self.reported.add(word)
            return True
        return False


class LocksetChecker:
    """Empty-lockset race detection over 4-byte-aligned words.

    tracked="heap" (default) confines tracking to the image and heap
    segments, minus every thread's stack range; tracked="all" applies
    the raw algorithm to every address.  grace=True exempts words while
    a single thread has been their only accessor.
    """

    name = "lockset"

    def __init__(self, machine: Machine | None, shadow=None,
                 tracked: str = "heap", grace: bool = False):
        if tracked not in ("heap", "all"):
            raise ValueError(f"unknown tracked policy {tracked!r}")
        if tracked == "heap" and machine is None:
            raise ValueError("tracked='heap' needs a machine for segment bounds")
        self.machine = machine
        self.tracked = tracked
        self.grace = grace
        self.table = LocksetTable()
        self._first_tid: dict = {}
        self._shared: set = set()

    def reset(self):
        self.table = LocksetTable()
        self._first_tid.clear()
        self._shared.clear()

    def _is_tracked(self, word: int) -> bool:
        if self.tracked == "all":
            return True
        st = self.machine.state
        in_image = st.image_origin <= word < st.image_end
        in_heap = HEAP_BASE <= word < HEAP_LIMIT
        if not (in_image or in_heap):
            return False
        for t in st.threads.values():
            if t.stack_base <= word < t.stack_top:
                return False
        return True

    def on_event(self, e: Event):
        if e.kind not in _MEM_KINDS:
            return
        first_word = e.addr & ~3
        for word in range(first_word, e.addr + e.width, 4):
            if not self._is_tracked(word):
                continue
            if self.grace and word not in self._shared:
                owner = self._first_tid.setdefault(word, e.tid)
                if owner == e.tid:
                    continue  # still exclusive to its first thread
                self._shared.add(word)
            if self.table.access(word, e.locks_held):
                yield Warning(
                    checker=self.name,
                    rule=RULE_RACE,
                    tid=e.tid,
                    pc=e.pc,
                    step=e.step,
                    address=word,
                    detail="no common lock protects this word across accesses",
                )


CHECKER_ORDER = ("null", "user", "fmt", "lockset")


def make_checkers(names, machine: Machine, shadow: ShadowState, options: dict | None = None):
    """Build the named plugins in canonical order.

    Options are flat "checker.key=value" pairs, currently
    lockset.tracked=heap|all and lockset.grace=on|off.
    """
    options = dict(options or {})
    unknown = set(names) - set(CHECKER_ORDER)
    if unknown:
        raise ValueError(f"unknown checkers: {', '.join(sorted(unknown))}")
    for key in options:
        if key not in ("lockset.tracked", "lockset.grace"):
            raise ValueError(f"unknown checker option {key!r}")
    grace_text = options.get("lockset.grace", "off")
    if grace_text not in ("on", "off"):
        raise ValueError("lockset.grace must be on or off")
    plugins = []
    for name in CHECKER_ORDER:
        if name not in names:
            continue
        if name == "null":
            plugins.append(NullChecker(machine, shadow))
        elif name == "user":
            plugins.append(UserChecker(machine, shadow))
        elif name == "fmt":
            plugins.append(FmtChecker(machine, shadow))
        else:
            plugins.append(
                LocksetChecker(
                    machine,
                    shadow,
                    tracked=options.get("lockset.tracked", "heap"),
                    grace=grace_text == "on",
                )
            )
    return plugins
