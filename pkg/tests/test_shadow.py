"""Shadow cell/object semantics.

Two styles here: whole-program runs (the shadow layer observing a real
machine) and synthetic event streams fed straight into ShadowState,
which pins down propagation rules one event at a time.
"""

from hypothesis import given, strategies as st

from scvm.machine import Event
from scvm.shadow import ShadowState, TagKind

from helpers import run_program


def ev(kind, **kw):
    meta = {
        "step": kw.pop("step", 0),
        "tid": kw.pop("tid", 0),
        "pc": kw.pop("pc", 0),
        "mode": kw.pop("mode", "user"),
        "iflag": kw.pop("iflag", True),
        "locks_held": kw.pop("locks_held", frozenset()),
    }
    return Event(kind=kind, **meta, **kw)


def alloc_into(sh, reg=0, tid=0):
    sh.on_event(ev("reg-write", reg=reg, tid=tid, value=0x8000, src=("syscall", 1)))
    return sh.reg_object(tid, reg)


# -- aliasing through register copies ------------------------------------


def test_copy_shares_the_handle():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOV r4, r0\nHALT", checkers=()
    )
    sh = result.shadow
    assert sh.reg_object(0, 0) is sh.reg_object(0, 4)
    assert TagKind.ALLOC_UNCHECKED in sh.reg_object(0, 4).tags


def test_check_through_alias_updates_all_holders():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOV r4, r0\nCMPI r4, 0\nHALT", checkers=()
    )
    sh = result.shadow
    assert TagKind.NULL_CHECKED in sh.reg_object(0, 0).tags
    assert sh.reg_object(0, 0) is sh.reg_object(0, 4)


def test_movi_severs_the_alias():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOV r4, r0\nMOVI r4, 0x4000\nHALT", checkers=()
    )
    sh = result.shadow
    assert sh.reg_object(0, 4) is sh.untagged
    assert TagKind.ALLOC_UNCHECKED in sh.reg_object(0, 0).tags


def test_compare_against_nonzero_is_not_a_null_check():
    _, result = run_program("MOVI r0, 16\nSYS 1\nCMPI r0, 5\nHALT", checkers=())
    assert TagKind.NULL_CHECKED not in result.shadow.reg_object(0, 0).tags


def test_cmp_with_zero_valued_register_counts():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOVI r5, 0\nCMP r0, r5\nHALT", checkers=()
    )
    assert TagKind.NULL_CHECKED in result.shadow.reg_object(0, 0).tags


def test_null_check_needs_a_nullable_tag():
    _, result = run_program("SYS 34\nCMPI r0, 0\nHALT", checkers=())
    obj = result.shadow.reg_object(0, 0)
    assert obj.tags == {TagKind.TAINTED}


# -- arithmetic ----------------------------------------------------------


def test_offset_arithmetic_keeps_the_object():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOVI r1, 4\nADD r2, r0, r1\nHALT", checkers=()
    )
    sh = result.shadow
    assert sh.reg_object(0, 2) is sh.reg_object(0, 0)


def test_merging_two_tagged_values_makes_a_fresh_union():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOV r3, r0\n"
        "MOVI r0, 16\nSYS 1\nADD r2, r3, r0\nHALT",
        checkers=(),
    )
    sh = result.shadow
    a, b, merged = sh.reg_object(0, 3), sh.reg_object(0, 0), sh.reg_object(0, 2)
    assert merged is not a and merged is not b
    assert merged.tags == a.tags | b.tags
    assert f"#{a.id}" in merged.note and f"#{b.id}" in merged.note
    # the merge never mutates its operands
    assert a.tags == {TagKind.ALLOC_UNCHECKED}


def test_xor_self_zeroing_clears_tags():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nXOR r0, r0, r0\nHALT", checkers=()
    )
    assert result.shadow.reg_object(0, 0) is result.shadow.untagged


def test_sub_self_zeroing_clears_tags():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nSUB r0, r0, r0\nHALT", checkers=()
    )
    assert result.shadow.reg_object(0, 0) is result.shadow.untagged


# -- memory cells --------------------------------------------------------


def test_handle_survives_a_store_load_round_trip():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOVI r1, 0x4000\nST [r1], r0\n"
        "LD r2, [r1]\nCMPI r2, 0\nHALT",
        checkers=(),
    )
    sh = result.shadow
    assert sh.reg_object(0, 2) is sh.reg_object(0, 0)
    assert TagKind.NULL_CHECKED in sh.reg_object(0, 0).tags


def test_word_store_replicates_across_all_four_bytes():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOVI r1, 0x4000\nST [r1], r0\nHALT", checkers=()
    )
    sh = result.shadow
    cells = [sh.mem_object(0x4000 + i) for i in range(4)]
    assert all(c is cells[0] for c in cells)
    assert sh.mem_object(0x4004) is sh.untagged


def test_byte_store_touches_one_cell():
    _, result = run_program(
        "MOVI r0, 16\nSYS 1\nMOVI r1, 0x4000\nSTB [r1+1], r0\nHALT", checkers=()
    )
    sh = result.shadow
    assert sh.mem_object(0x4001) is sh.reg_object(0, 0)
    assert sh.mem_object(0x4000) is sh.untagged
    assert sh.mem_object(0x4002) is sh.untagged


def test_word_load_adopts_lowest_byte_cell():
    sh = ShadowState()
    tagged = alloc_into(sh, reg=0)
    sh.on_event(ev("mem-write", addr=0x4000, width=1, src=("reg", 0)))
    sh.on_event(ev("reg-write", reg=2, value=0, src=("mem", 0x4000, 4)))
    assert sh.reg_object(0, 2) is tagged
    sh.on_event(ev("reg-write", reg=3, value=0, src=("mem", 0x4001, 4)))
    assert sh.reg_object(0, 3) is sh.untagged


# -- syscall boundary and hypercalls --------------------------------------


def test_kernel_entry_tags_argument_registers():
    _, result = run_program(
        "start: MOVI r0, h\nSYS 18\nSYS 16\nHALT\nh: SYS 17", checkers=()
    )
    sh = result.shadow
    objs = [sh.reg_object(0, i) for i in range(4)]
    assert all(o.tags == {TagKind.USER_UNCHECKED} for o in objs)
    assert len({o.id for o in objs}) == 4  # distinct, not one shared object
    assert all(o.note == "syscall boundary" for o in objs)
    assert sh.reg_object(0, 4) is sh.untagged


def test_check_user_read_adds_tag_and_note():
    _, result = run_program(
        "start: MOVI r0, h\nSYS 18\nSYS 16\nHALT\nh: MOVI r1, 64\nSYS 32\nSYS 17",
        checkers=(),
    )
    obj = result.shadow.reg_object(0, 0)
    assert TagKind.USER_READ_CHECKED in obj.tags
    assert TagKind.USER_WRITE_CHECKED not in obj.tags
    assert TagKind.USER_UNCHECKED in obj.tags  # the check annotates, never strips
    assert "checked len=64" in obj.note


def test_check_user_write_is_independent_of_read():
    _, result = run_program(
        "start: MOVI r0, h\nSYS 18\nSYS 16\nHALT\nh: SYS 33\nSYS 17",
        checkers=(),
    )
    obj = result.shadow.reg_object(0, 0)
    assert TagKind.USER_WRITE_CHECKED in obj.tags
    assert TagKind.USER_READ_CHECKED not in obj.tags


def test_check_on_non_user_value_is_inert():
    _, result = run_program("MOVI r0, 0x4000\nSYS 32\nHALT", checkers=())
    sh = result.shadow
    assert sh.reg_object(0, 0) is sh.untagged
    assert sh.untagged.tags == set()


def test_taint_hypercall_on_untagged_mints_an_object():
    _, result = run_program("MOVI r0, 0x4000\nSYS 34\nHALT", checkers=())
    sh = result.shadow
    obj = sh.reg_object(0, 0)
    assert obj is not sh.untagged
    assert obj.tags == {TagKind.TAINTED}
    assert sh.untagged.tags == set()


def test_taint_hypercall_on_tagged_adds_in_place():
    _, result = run_program("MOVI r0, 16\nSYS 1\nSYS 34\nHALT", checkers=())
    obj = result.shadow.reg_object(0, 0)
    assert obj.tags == {TagKind.ALLOC_UNCHECKED, TagKind.TAINTED}


def test_untrusted_source_range_materializes_on_read():
    _, result = run_program(
        "MOVI r0, 0x5000\nMOVI r1, 8\nSYS 35\n"
        "MOVI r3, 0x5000\nLDB r2, [r3]\nLDB r4, [r3+12]\nHALT",
        checkers=(),
    )
    sh = result.shadow
    assert (0x5000, 0x5008) in sh.taint_sources
    assert TagKind.TAINTED in sh.reg_object(0, 2).tags
    assert TagKind.TAINTED in sh.mem_object(0x5000).tags
    # one byte past the range stays clean
    assert sh.reg_object(0, 4) is sh.untagged


def test_untrusted_source_with_zero_length_is_ignored():
    _, result = run_program("MOVI r0, 0x5000\nMOVI r1, 0\nSYS 35\nHALT", checkers=())
    assert result.shadow.taint_sources == set()


def test_network_read_taints_the_buffer_with_one_object():
    _, result = run_program(
        "MOVI r0, 0x4000\nMOVI r1, 8\nSYS 3\nLDB r2, [r0]\nHALT", checkers=()
    )
    sh = result.shadow
    cells = [sh.mem_object(0x4000 + i) for i in range(8)]
    assert all(c is cells[0] for c in cells)
    assert cells[0].tags == {TagKind.TAINTED}
    assert "network read of 8 bytes" in cells[0].note
    assert sh.reg_object(0, 2) is cells[0]
    assert sh.mem_object(0x4008) is sh.untagged


# -- synthetic streams ----------------------------------------------------


def test_trace_records_cell_updates():
    trace = []
    sh = ShadowState(trace=trace)
    alloc_into(sh, reg=0, tid=1)
    assert trace == ["cell r0@t1 -> object 1 tags {ALLOC_UNCHECKED}"]
    sh.on_event(ev("compare", tid=1, rs=0, value=0))
    assert trace[-1] == "object 1 tags {ALLOC_UNCHECKED,NULL_CHECKED}"


def test_threads_have_independent_register_cells():
    sh = ShadowState()
    alloc_into(sh, reg=0, tid=0)
    assert sh.reg_object(1, 0) is sh.untagged
    sh.on_event(ev("reg-write", tid=1, reg=0, value=0, src=("imm",)))
    assert TagKind.ALLOC_UNCHECKED in sh.reg_object(0, 0).tags


@given(
    copies=st.lists(
        st.tuples(st.integers(0, 7), st.integers(0, 7)), min_size=1, max_size=40
    )
)
def test_register_copies_never_mint_objects(copies):
    sh = ShadowState()
    tagged = alloc_into(sh, reg=0)
    for step, (dst, src) in enumerate(copies, start=1):
        sh.on_event(ev("reg-write", step=step, reg=dst, value=0, src=("reg", src)))
    ids = {sh.reg_object(0, r).id for r in range(8)}
    assert ids <= {sh.untagged.id, tagged.id}
    assert tagged.tags == {TagKind.ALLOC_UNCHECKED}


@given(
    writes=st.lists(
        st.tuples(st.sampled_from([1, 4]), st.integers(0x4000, 0x40FF)),
        min_size=1,
        max_size=30,
    )
)
def test_memory_writes_only_touch_their_span(writes):
    sh = ShadowState()
    alloc_into(sh, reg=0)
    touched = set()
    for width, addr in writes:
        sh.on_event(ev("mem-write", addr=addr, width=width, src=("reg", 0)))
        touched.update(range(addr, addr + width))
    for a in range(0x3FF0, 0x4110):
        if a in touched:
            assert sh.mem_object(a).tags == {TagKind.ALLOC_UNCHECKED}
        else:
            assert sh.mem_object(a) is sh.untagged
