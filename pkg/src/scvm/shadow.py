"""Shadow machine state: type/taint metadata mirroring the guest.

Every register (per guest thread) and every guest memory byte has a
shadow cell.  A cell holds a handle to a TypeObject, and aliased cells
hold the *same* handle, so a check observed through one alias (say a
null compare on a copied pointer) is visible through every other alias.
That extra level of indirection is the whole point: copying a value
copies the handle, never the tags.

The engine is driven purely by machine events (see machine.Event and
its `src` provenance convention).  It never reads machine registers or
memory directly, which keeps replaying a recorded stream equivalent to
observing a live run.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

from .isa import MEMORY_SIZE, NUM_REGS
from .machine import (
    SYS_ALLOC,
    SYS_CHECK_USER_READ,
    SYS_CHECK_USER_WRITE,
    SYS_KCALL,
    SYS_OPEN,
    SYS_READ_NET,
    SYS_TAG_TAINT,
    SYS_TAG_UNTRUSTED_SOURCE,
    Event,
)


class TagKind(enum.Enum):
    USER_UNCHECKED = "USER_UNCHECKED"
    USER_READ_CHECKED = "USER_READ_CHECKED"
    USER_WRITE_CHECKED = "USER_WRITE_CHECKED"
    ALLOC_UNCHECKED = "ALLOC_UNCHECKED"
    NULL_CHECKED = "NULL_CHECKED"
    TAINTED = "TAINTED"
    FD_UNCHECKED = "FD_UNCHECKED"

    def __str__(self):
        return self.value


# Tags that make a pointer "nullable": NULL_CHECKED only ever rides
# along with one of these.
NULLABLE_TAGS = frozenset({TagKind.ALLOC_UNCHECKED, TagKind.FD_UNCHECKED})

# Ops where `op rd, rs, rs` is an idiomatic zeroing of rd.
ZEROING_OPS = frozenset({"XOR", "SUB"})


@dataclass(eq=False)
class TypeObject:
    """Shared, mutable tag set.  Identity (not content) is what cells
    alias; two objects with equal tags are still distinct."""

    id: int
    tags: set
    origin: tuple | None = None  # (pc, tid, step) where created
    note: str = ""

    def __repr__(self):
        tags = ",".join(sorted(t.name for t in self.tags))
        return f"TypeObject(#{self.id} {{{tags}}})"


def _fmt_tags(tags) -> str:
    return "{%s}" % ",".join(sorted(t.name for t in tags))


class ShadowState:
    """One cell per register per thread, one per guest memory byte.

    `trace`, when set to a list, collects a line per cell/tag update
    ("cell r0@t1 -> object 3 tags {USER_UNCHECKED}").
    """

    def __init__(self, trace: list | None = None):
        self._ids = itertools.count(1)
        self.untagged = TypeObject(0, set(), None, "untagged")
        self.mem_cells: list = [self.untagged] * MEMORY_SIZE
        self.reg_cells: dict = {}
        self.taint_sources: set = set()  # (lo, hi) half-open ranges
        self.trace = trace

    # -- cell plumbing ----------------------------------------------

    def fresh(self, tags, origin=None, note="") -> TypeObject:
        return TypeObject(next(self._ids), set(tags), origin, note)

    def _regs(self, tid: int) -> list:
        cells = self.reg_cells.get(tid)
        if cells is None:
            cells = [self.untagged] * NUM_REGS
            self.reg_cells[tid] = cells
        return cells

    def reg_object(self, tid: int, reg: int) -> TypeObject:
        return self._regs(tid)[reg]

    def mem_object(self, addr: int) -> TypeObject:
        return self.mem_cells[addr]

    def _set_reg(self, tid: int, reg: int, obj: TypeObject):
        self._regs(tid)[reg] = obj
        if self.trace is not None:
            self.trace.append(
                f"cell r{reg}@t{tid} -> object {obj.id} tags {_fmt_tags(obj.tags)}"
            )

    def _set_mem(self, addr: int, obj: TypeObject):
        self.mem_cells[addr] = obj
        if self.trace is not None:
            self.trace.append(
                f"cell 0x{addr:04X} -> object {obj.id} tags {_fmt_tags(obj.tags)}"
            )

    def _add_tag(self, obj: TypeObject, tag: TagKind):
        obj.tags.add(tag)
        if self.trace is not None:
            self.trace.append(f"object {obj.id} tags {_fmt_tags(obj.tags)}")

    def _in_taint_source(self, addr: int) -> bool:
        return any(lo <= addr < hi for lo, hi in self.taint_sources)

    # -- event propagation ------------------------------------------

    def on_event(self, e: Event) -> None:
        kind = e.kind
        if kind == "reg-write":
            self._set_reg(e.tid, e.reg, self._source_object(e))
        elif kind == "mem-write":
            self._on_mem_write(e)
        elif kind == "mem-read":
            # Reads from a registered untrusted range materialize taint
            # before the load's reg-write picks the cell up.
            if self.taint_sources:
                for a in range(e.addr, e.addr + e.width):
                    if self._in_taint_source(a):
                        obj = self.fresh(
                            {TagKind.TAINTED},
                            origin=(e.pc, e.tid, e.step),
                            note="read from untrusted source range",
                        )
                        self._set_mem(a, obj)
        elif kind == "compare":
            self._on_compare(e)
        elif kind == "syscall":
            self._on_syscall(e)
        # every other kind carries no shadow semantics

    def _source_object(self, e: Event) -> TypeObject:
        src = e.src
        regs = self._regs(e.tid)
        if src[0] == "imm":
            return self.untagged
        if src[0] == "reg":
            return regs[src[1]]
        if src[0] == "mem":
            # word loads adopt the lowest-addressed byte's cell
            return self.mem_cells[src[1]]
        if src[0] == "binop":
            _, opname, rs, rt = src
            if rs == rt and opname in ZEROING_OPS:
                return self.untagged
            a, b = regs[rs], regs[rt]
            if a.tags and b.tags:
                return self.fresh(
                    a.tags | b.tags,
                    origin=(e.pc, e.tid, e.step),
                    note=f"{opname} merge of #{a.id} and #{b.id}",
                )
            if a.tags:
                return a
            if b.tags:
                return b
            return self.untagged
        if src[0] == "syscall":
            origin = (e.pc, e.tid, e.step)
            if src[1] == SYS_ALLOC:
                return self.fresh(
                    {TagKind.ALLOC_UNCHECKED}, origin, f"ALLOC at step {e.step}"
                )
            if src[1] == SYS_OPEN:
                return self.fresh(
                    {TagKind.FD_UNCHECKED}, origin, f"OPEN at step {e.step}"
                )
            return self.untagged
        return self.untagged

    def _on_mem_write(self, e: Event) -> None:
        if e.src[0] == "reg":
            obj = self._regs(e.tid)[e.src[1]]
        elif e.src[0] == "syscall" and e.src[1] == SYS_READ_NET:
            obj = self.fresh(
                {TagKind.TAINTED},
                origin=(e.pc, e.tid, e.step),
                note=f"network read of {e.width} bytes",
            )
        else:
            obj = self.untagged
        for a in range(e.addr, e.addr + e.width):
            self._set_mem(a, obj)

    def _on_compare(self, e: Event) -> None:
        # A compare against zero counts as the null check for whatever
        # allocation/descriptor object the left register aliases.
        if e.value != 0:
            return
        obj = self._regs(e.tid)[e.rs]
        if obj.tags & NULLABLE_TAGS and TagKind.NULL_CHECKED not in obj.tags:
            self._add_tag(obj, TagKind.NULL_CHECKED)

    def _on_syscall(self, e: Event) -> None:
        n = e.sysno
        if n == SYS_KCALL:
            # Everything userland hands across the boundary is an
            # unchecked user value until proven otherwise.
            origin = (e.pc, e.tid, e.step)
            for i in range(4):
                self._set_reg(
                    e.tid,
                    i,
                    self.fresh({TagKind.USER_UNCHECKED}, origin, "syscall boundary"),
                )
        elif n in (SYS_CHECK_USER_READ, SYS_CHECK_USER_WRITE):
            obj = self._regs(e.tid)[0]
            if TagKind.USER_UNCHECKED in obj.tags:
                tag = (
                    TagKind.USER_READ_CHECKED
                    if n == SYS_CHECK_USER_READ
                    else TagKind.USER_WRITE_CHECKED
                )
                self._add_tag(obj, tag)
                obj.note += f"; checked len={e.args[1]} at pc 0x{e.pc:04X}"
        elif n == SYS_TAG_TAINT:
            obj = self._regs(e.tid)[0]
            if obj is self.untagged:
                self._set_reg(
                    e.tid,
                    0,
                    self.fresh(
                        {TagKind.TAINTED}, (e.pc, e.tid, e.step), "tagged by hypercall"
                    ),
                )
            else:
                self._add_tag(obj, TagKind.TAINTED)
        elif n == SYS_TAG_UNTRUSTED_SOURCE:
            lo, length = e.args[0], e.args[1]
            if length > 0:
                self.taint_sources.add((lo, lo + length))
