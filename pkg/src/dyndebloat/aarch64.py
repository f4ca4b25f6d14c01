"""Coarse AArch64 instruction classification for gadget statistics.

Words are bucketed by the top-level encoding group (bits 28..25) and, inside
the data-processing groups, by instruction family.  Compares, logical
operations, conditional compare and conditional select count as
conditional/logic; other integer data processing counts as arithmetic.
Register moves written as ``ORR Xd, XZR, ...`` are treated as arithmetic,
which is how disassemblers present them (``mov``).  System instructions and
scalar FP/SIMD/SVE land in ``OTHER``.  Reserved and unallocated space,
including the all-zero word, is ``INVALID``.
"""

from __future__ import annotations

import enum


class InstrClass(enum.Enum):
    LOAD_STORE = "LoadStore"
    BRANCHING = "Branching"
    CONDITIONAL_LOGIC = "ConditionalLogic"
    ARITHMETIC = "Arithmetic"
    OTHER = "Other"
    INVALID = "Invalid"

    @property
    def valid(self) -> bool:
        return self is not InstrClass.INVALID


class Terminator(enum.Enum):
    RET = "Ret"
    RET_REG = "RetReg"
    BR = "Br"
    BLR = "Blr"


RET = 0xD65F03C0
_REG_BRANCH_MASK = 0xFFFFFC1F


def terminator(word: int) -> Terminator | None:
    """Return the gadget terminator kind of ``word``, if it is one."""
    masked = word & _REG_BRANCH_MASK
    if masked == 0xD65F0000:
        return Terminator.RET if word == RET else Terminator.RET_REG
    if masked == 0xD61F0000:
        return Terminator.BR
    if masked == 0xD63F0000:
        return Terminator.BLR
    return None


def _bits(word: int, hi: int, lo: int) -> int:
    return (word >> lo) & ((1 << (hi - lo + 1)) - 1)


def _is_move_alias(word: int) -> bool:
    # ORR with the zero register as first source: MOV (register) or MOV (bitmask immediate).
    return _bits(word, 30, 29) == 0b01 and _bits(word, 9, 5) == 31


def _dp_immediate(word: int) -> InstrClass:
    op = _bits(word, 25, 23)
    if op in (0b010, 0b011):
        # ADDS/SUBS writing XZR are CMN/CMP.
        if op == 0b010 and _bits(word, 29, 29) and _bits(word, 4, 0) == 31:
            return InstrClass.CONDITIONAL_LOGIC
        return InstrClass.ARITHMETIC
    if op == 0b100:
        return InstrClass.ARITHMETIC if _is_move_alias(word) else InstrClass.CONDITIONAL_LOGIC
    return InstrClass.ARITHMETIC


def _dp_register(word: int) -> InstrClass:
    if _bits(word, 28, 24) == 0b01010:
        shifted_move = _is_move_alias(word) and not _bits(word, 21, 21) and _bits(word, 15, 10) == 0
        return InstrClass.ARITHMETIC if shifted_move else InstrClass.CONDITIONAL_LOGIC
    if _bits(word, 28, 24) == 0b01011:
        if _bits(word, 29, 29) and _bits(word, 4, 0) == 31:
            return InstrClass.CONDITIONAL_LOGIC
        return InstrClass.ARITHMETIC
    if _bits(word, 28, 21) in (0b11010010, 0b11010100):
        return InstrClass.CONDITIONAL_LOGIC
    return InstrClass.ARITHMETIC


def _branch_system(word: int) -> InstrClass:
    if _bits(word, 30, 26) == 0b00101:
        return InstrClass.BRANCHING  # B, BL
    if _bits(word, 30, 25) in (0b011010, 0b011011):
        return InstrClass.BRANCHING  # CBZ/CBNZ, TBZ/TBNZ
    if _bits(word, 31, 24) == 0b01010100:
        return InstrClass.BRANCHING  # B.cond
    if _bits(word, 31, 24) == 0b11010100:
        return InstrClass.BRANCHING  # SVC, HVC, BRK, ...
    if _bits(word, 31, 22) == 0b1101010100:
        return InstrClass.OTHER  # hints, barriers, MSR/MRS
    if _bits(word, 31, 25) == 0b1101011:
        return InstrClass.BRANCHING  # BR, BLR, RET, ERET
    return InstrClass.INVALID


def decode(word: int) -> InstrClass:
    word &= 0xFFFFFFFF
    op0 = _bits(word, 28, 25)
    if op0 in (0b0000, 0b0001, 0b0011):
        return InstrClass.INVALID
    if op0 == 0b0010:
        return InstrClass.OTHER  # SVE
    if op0 & 0b0101 == 0b0100:
        return InstrClass.LOAD_STORE
    if op0 & 0b0111 == 0b0101:
        return _dp_register(word)
    if op0 & 0b0111 == 0b0111:
        return InstrClass.OTHER  # scalar FP and Advanced SIMD
    if op0 & 0b1110 == 0b1000:
        return _dp_immediate(word)
    return _branch_system(word)


def is_branch(word: int) -> bool:
    return decode(word) is InstrClass.BRANCHING
