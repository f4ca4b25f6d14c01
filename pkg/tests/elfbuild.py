"""Build minimal ELF64 shared objects in memory for tests.

Layout: one RX load segment starting at file offset 0 / vaddr 0 holding the
headers, code and tables; section headers for .text, .dynsym, .dynstr and
.shstrtab follow.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
PHDR = struct.Struct("<IIQQQQQQ")
SHDR = struct.Struct("<IIQQQQIIQQ")
SYM = struct.Struct("<IBBHQQ")


@dataclass
class Sym:
    name: str
    value: int
    size: int
    stype: int = 2  # STT_FUNC
    shndx: int = 1  # .text; 0 for undefined


def build_elf(code: bytes, code_vaddr: int, symbols: list[Sym], machine: int = 183, pad_to: int | None = None) -> bytes:
    """``code`` is placed at ``code_vaddr`` (== its file offset)."""
    dynstr = b"\0"
    name_off = {}
    for s in symbols:
        if s.name not in name_off:
            name_off[s.name] = len(dynstr)
            dynstr += s.name.encode() + b"\0"
    dynsym = SYM.pack(0, 0, 0, 0, 0, 0)
    for s in symbols:
        dynsym += SYM.pack(name_off[s.name], (1 << 4) | s.stype, 0, s.shndx, s.value, s.size)
    shstr = b"\0.text\0.dynsym\0.dynstr\0.shstrtab\0"

    phoff = EHDR.size
    assert code_vaddr >= phoff + PHDR.size
    body = bytearray(code_vaddr)
    body += code
    if pad_to is not None and len(body) < pad_to:
        body += bytes(pad_to - len(body))
    while len(body) % 8:
        body.append(0)
    dynsym_off = len(body)
    body += dynsym
    dynstr_off = len(body)
    body += dynstr
    shstr_off = len(body)
    body += shstr
    while len(body) % 8:
        body.append(0)
    seg_size = len(body)
    shoff = len(body)
    sections = [
        SHDR.pack(0, 0, 0, 0, 0, 0, 0, 0, 0, 0),
        SHDR.pack(1, 1, 6, code_vaddr, code_vaddr, len(code), 0, 0, 4, 0),
        SHDR.pack(7, 11, 2, dynsym_off, dynsym_off, len(dynsym), 3, 1, 8, SYM.size),
        SHDR.pack(15, 3, 2, dynstr_off, dynstr_off, len(dynstr), 0, 0, 1, 0),
        SHDR.pack(23, 3, 0, 0, shstr_off, len(shstr), 0, 0, 1, 0),
    ]
    for sh in sections:
        body += sh
    ident = b"\x7fELF" + bytes([2, 1, 1]) + bytes(9)
    ehdr = EHDR.pack(ident, 3, machine, 1, 0, phoff, shoff, 0, EHDR.size, PHDR.size, 1, SHDR.size, len(sections), 4)
    phdr = PHDR.pack(1, 5, 0, 0, 0, seg_size, seg_size, 0x1000)
    body[0:EHDR.size] = ehdr
    body[phoff:phoff + PHDR.size] = phdr
    return bytes(body)


def words(*ws: int) -> bytes:
    return struct.pack(f"<{len(ws)}I", *ws)
