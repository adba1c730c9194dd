"""Instruction set definition and the fixed 8-byte binary encoding.

Every instruction occupies 8 bytes:

    byte 0      opcode
    byte 1      register pack: low nibble rd, high nibble rs
    byte 2      rt
    byte 3      reserved, always 0
    bytes 4-7   signed 32-bit immediate, little-endian

Unused register fields and immediates are 0 in well-formed instructions,
which makes decode(encode(i)) == i hold for everything the assembler can
produce.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

NUM_REGS = 8
MEMORY_SIZE = 65536
INSTR_SIZE = 8

# r6/r7 are stack/link registers by convention only; nothing enforces it.
REG_STACK = 6
REG_LINK = 7


class Opcode(enum.IntEnum):
    MOVI = 0x01
    MOV = 0x02
    LD = 0x10
    LDB = 0x11
    ST = 0x12
    STB = 0x13
    ADD = 0x20
    SUB = 0x21
    MUL = 0x22
    AND = 0x23
    OR = 0x24
    XOR = 0x25
    CMP = 0x30
    CMPI = 0x31
    BEQ = 0x40
    BNE = 0x41
    JMP = 0x42
    CALL = 0x43
    RET = 0x44
    SYS = 0x50
    CLI = 0x60
    STI = 0x61
    HALT = 0x7F


ALU_OPS = frozenset({Opcode.ADD, Opcode.SUB, Opcode.MUL, Opcode.AND, Opcode.OR, Opcode.XOR})
LOAD_OPS = frozenset({Opcode.LD, Opcode.LDB})
STORE_OPS = frozenset({Opcode.ST, Opcode.STB})

_OPCODE_VALUES = {op.value for op in Opcode}

IMM_MIN = -(2**31)
IMM_MAX = 2**31 - 1


class DecodeError(ValueError):
    """Raised for encodings that do not correspond to an instruction."""


@dataclass(frozen=True)
class Instruction:
    opcode: Opcode
    rd: int = 0
    rs: int = 0
    rt: int = 0
    imm: int = 0

    @property
    def width(self) -> int | None:
        """Memory access width: 4 for LD/ST, 1 for LDB/STB, None otherwise."""
        if self.opcode in (Opcode.LD, Opcode.ST):
            return 4
        if self.opcode in (Opcode.LDB, Opcode.STB):
            return 1
        return None

    def __str__(self) -> str:
        op = self.opcode
        if op == Opcode.MOVI:
            return f"MOVI r{self.rd}, {self.imm}"
        if op == Opcode.MOV:
            return f"MOV r{self.rd}, r{self.rs}"
        if op in LOAD_OPS:
            return f"{op.name} r{self.rd}, [r{self.rs}{self.imm:+d}]"
        if op in STORE_OPS:
            return f"{op.name} [r{self.rs}{self.imm:+d}], r{self.rt}"
        if op in ALU_OPS:
            return f"{op.name} r{self.rd}, r{self.rs}, r{self.rt}"
        if op == Opcode.CMP:
            return f"CMP r{self.rs}, r{self.rt}"
        if op == Opcode.CMPI:
            return f"CMPI r{self.rs}, {self.imm}"
        if op in (Opcode.BEQ, Opcode.BNE, Opcode.JMP, Opcode.CALL, Opcode.SYS):
            return f"{op.name} {self.imm}"
        return op.name


def encode(instr: Instruction) -> bytes:
    """Encode a well-formed instruction into its 8-byte form."""
    return struct.pack(
        "<BBBBi",
        instr.opcode.value,
        (instr.rs << 4) | instr.rd,
        instr.rt,
        0,
        instr.imm,
    )


def decode(raw: bytes) -> Instruction:
    """Decode 8 bytes into an Instruction.

    Raises DecodeError for an unknown opcode byte or a register field
    above 7.
    """
    if len(raw) < INSTR_SIZE:
        raise DecodeError(f"need {INSTR_SIZE} bytes, got {len(raw)}")
    opbyte, regpack, rt, _reserved, imm = struct.unpack("<BBBBi", raw[:INSTR_SIZE])
    if opbyte not in _OPCODE_VALUES:
        raise DecodeError(f"unknown opcode byte 0x{opbyte:02x}")
    rd = regpack & 0x0F
    rs = regpack >> 4
    for name, val in (("rd", rd), ("rs", rs), ("rt", rt)):
        if val >= NUM_REGS:
            raise DecodeError(f"register field {name}={val} out of range 0..7")
    return Instruction(Opcode(opbyte), rd=rd, rs=rs, rt=rt, imm=imm)
