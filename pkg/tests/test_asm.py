import pytest
from hypothesis import given, strategies as st

from scvm.asm import (
    AsmError,
    ImageError,
    ProgramImage,
    assemble,
    read_image,
    write_image,
)
from scvm.isa import INSTR_SIZE, Instruction, Opcode, decode


def decode_all(image: ProgramImage):
    """Decode the instruction stream of a code-only image."""
    out = []
    for off in range(0, len(image.payload), INSTR_SIZE):
        out.append(decode(image.payload[off : off + INSTR_SIZE]))
    return out


def test_two_instruction_program():
    image = assemble("MOVI r1, 5\nHALT")
    assert decode_all(image) == [
        Instruction(Opcode.MOVI, rd=1, imm=5),
        Instruction(Opcode.HALT),
    ]
    assert image.origin == 0
    assert image.entry == 0


def test_asciiz_appends_nul():
    image = assemble('.asciiz "%s"\nHALT')
    assert image.payload[:3] == bytes([0x25, 0x73, 0x00])


def test_label_resolves_to_absolute_address():
    # Hand-resolved: JMP sits at 0, HALT at 8, so the immediate is 8.
    image = assemble("JMP end\nend: HALT")
    jmp = decode(image.payload[:8])
    assert jmp.opcode == Opcode.JMP
    assert jmp.imm == 8
    assert image.symbols["end"] == 8


def test_undefined_label_names_line():
    with pytest.raises(AsmError) as exc:
        assemble("MOVI r1, 5\nJMP nowhere\n")
    assert exc.value.lineno == 2
    assert "nowhere" in str(exc.value)


def test_duplicate_label_rejected():
    with pytest.raises(AsmError) as exc:
        assemble("a: HALT\na: HALT")
    assert exc.value.lineno == 2


def test_imm_out_of_range():
    with pytest.raises(AsmError):
        assemble("MOVI r1, 4294967296")  # 2**32
    with pytest.raises(AsmError):
        assemble("MOVI r1, -2147483649")


def test_unsigned_spelling_of_negative_imm():
    image = assemble("MOVI r1, 0xFFFFFFFF\nHALT")
    assert decode_all(image)[0].imm == -1


def test_malformed_operand_names_line():
    with pytest.raises(AsmError) as exc:
        assemble("HALT\nMOVI r1, fish+1")
    assert exc.value.lineno == 2


def test_wrong_operand_count():
    with pytest.raises(AsmError):
        assemble("MOV r1")
    with pytest.raises(AsmError):
        assemble("HALT r1")


def test_register_out_of_range():
    with pytest.raises(AsmError):
        assemble("MOVI r9, 1")


def test_unknown_mnemonic_and_directive():
    with pytest.raises(AsmError):
        assemble("FROB r1")
    with pytest.raises(AsmError):
        assemble(".align 8")


def test_char_immediates():
    image = assemble("MOVI r1, 'A'\nMOVI r2, '\\n'\nMOVI r3, '\\0'\nHALT")
    instrs = decode_all(image)
    assert [i.imm for i in instrs[:3]] == [65, 10, 0]


def test_mem_operand_forms():
    image = assemble("LD r1, [r2+8]\nLD r1, [r2-4]\nLD r1, [r2]\nHALT")
    instrs = decode_all(image)
    assert (instrs[0].rs, instrs[0].imm) == (2, 8)
    assert (instrs[1].rs, instrs[1].imm) == (2, -4)
    assert (instrs[2].rs, instrs[2].imm) == (2, 0)


def test_store_operand_order():
    image = assemble("ST [r1+4], r2\nHALT")
    st_instr = decode_all(image)[0]
    assert (st_instr.rs, st_instr.imm, st_instr.rt) == (1, 4, 2)


def test_org_sets_origin_and_entry_is_first_instruction():
    image = assemble('.org 0x100\nmsg: .asciiz "hi"\nstart: MOVI r0, msg\nHALT')
    assert image.origin == 0x100
    assert image.symbols["msg"] == 0x100
    # 3 bytes of string pad to the next 8-byte boundary for code
    assert image.symbols["start"] == 0x108
    assert image.entry == 0x108


def test_org_must_not_move_backwards():
    with pytest.raises(AsmError):
        assemble(".org 0x100\nHALT\n.org 0x50\nHALT")


def test_first_org_must_be_instruction_aligned():
    with pytest.raises(AsmError):
        assemble(".org 12\nHALT")


def test_word_aligns_to_four():
    image = assemble('.asciiz "abc"\nval: .word 0x11223344\nstart: HALT')
    # string occupies [0,4); the word lands at 4
    assert image.symbols["val"] == 4
    assert image.payload[4:8] == bytes([0x44, 0x33, 0x22, 0x11])


def test_instruction_offsets_are_multiples_of_eight():
    src = '.org 0\na: .asciiz "xy"\nb: MOVI r1, 1\nc: .word 7\nd: HALT\n'
    image = assemble(src)
    for label in ("b", "d"):
        assert (image.symbols[label] - image.origin) % INSTR_SIZE == 0


def test_word_accepts_label_value():
    image = assemble("ptr: .word target\ntarget: HALT")
    target = image.symbols["target"]
    assert image.payload[0:4] == target.to_bytes(4, "little")


def test_trailing_label_binds_to_end():
    image = assemble("HALT\nend:")
    assert image.symbols["end"] == 8


def test_comments_and_blank_lines_ignored():
    image = assemble("; leading comment\n\nstart: HALT ; trailing\n")
    assert decode_all(image) == [Instruction(Opcode.HALT)]


def test_semicolon_inside_string_is_not_a_comment():
    image = assemble('.asciiz "a;b"\nHALT')
    assert image.payload[:4] == b"a;b\x00"


def test_empty_program_rejected():
    with pytest.raises(AsmError):
        assemble("; nothing here\n")
    with pytest.raises(AsmError):
        assemble('.asciiz "data only"')


def test_assembly_is_deterministic():
    src = (
        '.org 0x200\nstart: MOVI r1, 10\nloop: SUB r1, r1, r2\nBNE loop\n'
        'msg: .asciiz "done"\nHALT\n'
    )
    assert assemble(src).to_bytes() == assemble(src).to_bytes()


def test_image_container_round_trip(tmp_path):
    image = assemble("MOVI r1, 5\nHALT")
    path = tmp_path / "t.img"
    write_image(image, path)
    loaded = read_image(path)
    assert loaded.origin == image.origin
    assert loaded.entry == image.entry
    assert loaded.payload == image.payload


def test_image_container_rejects_garbage():
    with pytest.raises(ImageError):
        ProgramImage.from_bytes(b"NOPE" + bytes(13))
    good = assemble("HALT").to_bytes()
    with pytest.raises(ImageError):
        ProgramImage.from_bytes(good[:10])  # truncated header
    with pytest.raises(ImageError):
        ProgramImage.from_bytes(good[:-2])  # truncated payload
    versioned = bytearray(good)
    versioned[4] = 9
    with pytest.raises(ImageError):
        ProgramImage.from_bytes(bytes(versioned))


def test_image_invariants_enforced():
    with pytest.raises(ImageError):
        ProgramImage(origin=65530, payload=bytes(16), entry=65530)
    with pytest.raises(ImageError):
        ProgramImage(origin=0, payload=bytes(8), entry=8)


@given(
    values=st.lists(st.integers(-(2**31), 2**31 - 1), min_size=1, max_size=8),
    org=st.sampled_from([0, 8, 0x80, 0x400]),
)
def test_generated_programs_assemble_deterministically(values, org):
    lines = [f".org {org}"]
    for i, v in enumerate(values):
        lines.append(f"l{i}: MOVI r{i % 8}, {v}")
    lines.append("HALT")
    src = "\n".join(lines)
    first = assemble(src)
    second = assemble(src)
    assert first.to_bytes() == second.to_bytes()
    assert first.symbols == second.symbols
    assert [i.imm for i in decode_all(first)[:-1]] == values
