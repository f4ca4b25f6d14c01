"""ELF64 AArch64 shared objects: parsing, simulated loading, load-time erasure.

Only what the loader needs is parsed: the file header, program headers,
section headers, and the dynamic symbol table with its string table.
Function lookup is a linear scan of ``.dynsym`` by exact name.

Erasing a function overwrites its loaded bytes with zeros and writes one
``RET`` (C0 03 5F D6) at the first word, so callers bounce straight back.
Everything else in the mapping is left untouched, including neighbours that
share the page.
"""

from __future__ import annotations

import enum
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .errors import (
    ElfFormatError,
    MalformedTable,
    NotAFunction,
    OutOfRange,
    SmallFunctionWarning,
    SpanTooSmall,
    SymbolNotFound,
    UnalignedSpan,
    UnsupportedMachine,
    ZeroSize,
)

PAGE_SIZE = 4096
EM_AARCH64 = 183
RET_WORD = 0xD65F03C0
RET_STUB = RET_WORD.to_bytes(4, "little")
DEFAULT_BASE = 0x7F00_0000_0000
# Upper bound on the simulated mapping; anything larger is treated as corrupt.
MAX_MAPPING = 1 << 30

PT_LOAD = 1
SHT_STRTAB = 3
SHT_DYNSYM = 11
SHN_UNDEF = 0
STT_OBJECT = 1
STT_FUNC = 2

_EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
_PHDR = struct.Struct("<IIQQQQQQ")
_SHDR = struct.Struct("<IIQQQQIIQQ")
_SYM = struct.Struct("<IBBHQQ")


def page_floor(value: int) -> int:
    return value - value % PAGE_SIZE


def page_ceil(value: int) -> int:
    return -(-value // PAGE_SIZE) * PAGE_SIZE


class SymbolType(enum.Enum):
    FUNC = "func"
    OBJECT = "object"
    OTHER = "other"


@dataclass(frozen=True)
class Segment:
    file_offset: int
    file_size: int
    vaddr: int
    mem_size: int
    align: int
    flags: int

    @property
    def end(self) -> int:
        return self.vaddr + self.mem_size

    def contains(self, start: int, size: int) -> bool:
        return self.vaddr <= start and start + size <= self.end


@dataclass(frozen=True)
class Section:
    name: str
    sh_type: int
    addr: int
    offset: int
    size: int
    link: int
    entsize: int


@dataclass(frozen=True)
class SymbolEntry:
    name: str
    value: int
    size: int
    sym_type: SymbolType
    defined: bool
    binding: int = 0


@dataclass(frozen=True)
class FunctionSpan:
    symbol: str
    vaddr: int
    size: int

    @property
    def end(self) -> int:
        return self.vaddr + self.size

    @property
    def key(self) -> tuple[int, int]:
        return (self.vaddr, self.size)


@dataclass(frozen=True)
class ElfImage:
    data: bytes
    machine: int
    load_segments: tuple[Segment, ...]
    sections: tuple[Section, ...]
    dynsym: tuple[SymbolEntry, ...]
    dynstr: bytes
    name: str = ""

    def symbols(self, name: str) -> list[SymbolEntry]:
        return [s for s in self.dynsym if s.name == name]

    def exported_functions(self) -> list[SymbolEntry]:
        """Defined, sized function symbols in table order."""
        return [s for s in self.dynsym if s.sym_type is SymbolType.FUNC and s.defined and s.size > 0]

    def mapped_range(self) -> tuple[int, int]:
        lo = page_floor(min(s.vaddr for s in self.load_segments))
        hi = page_ceil(max(s.end for s in self.load_segments))
        return lo, hi


def _unpack(fmt: struct.Struct, data: bytes, offset: int, what: str) -> tuple:
    if offset < 0 or offset + fmt.size > len(data):
        raise MalformedTable(f"{what} at {offset:#x} lies outside the file")
    return fmt.unpack_from(data, offset)


def _check_range(data: bytes, offset: int, size: int, what: str) -> None:
    if offset < 0 or size < 0 or offset + size > len(data):
        raise MalformedTable(f"{what} [{offset:#x}, +{size:#x}) lies outside the file")


def _cstring(table: bytes, index: int, what: str) -> str:
    if index >= len(table):
        raise MalformedTable(f"{what} name index {index} outside string table of {len(table)} bytes")
    end = table.find(b"\0", index)
    if end < 0:
        raise MalformedTable(f"{what} name at {index} is not NUL-terminated")
    return table[index:end].decode("utf-8", errors="replace")


def parse_elf(data: bytes, name: str = "") -> ElfImage:
    data = bytes(data)
    if len(data) < 16 or data[:4] != b"\x7fELF":
        raise ElfFormatError("missing ELF magic")
    if data[4] != 2:
        raise ElfFormatError(f"unsupported ELF class {data[4]} (need 64-bit)")
    if data[5] != 1:
        raise ElfFormatError(f"unsupported data encoding {data[5]} (need little-endian)")
    if len(data) < _EHDR.size:
        raise ElfFormatError("truncated ELF header")
    (_, _e_type, machine, _version, _entry, phoff, shoff, _flags, _ehsize,
     phentsize, phnum, shentsize, shnum, shstrndx) = _EHDR.unpack_from(data, 0)
    if machine != EM_AARCH64:
        raise UnsupportedMachine(f"machine {machine} is not AArch64 ({EM_AARCH64})")

    segments = []
    if phnum:
        if phentsize < _PHDR.size:
            raise MalformedTable(f"program header entry size {phentsize} too small")
        for i in range(phnum):
            p_type, p_flags, p_offset, p_vaddr, _paddr, p_filesz, p_memsz, p_align = _unpack(
                _PHDR, data, phoff + i * phentsize, "program header"
            )
            if p_type != PT_LOAD:
                continue
            _check_range(data, p_offset, p_filesz, "load segment")
            if p_filesz > p_memsz:
                raise MalformedTable("load segment file size exceeds memory size")
            segments.append(Segment(p_offset, p_filesz, p_vaddr, p_memsz, p_align, p_flags))
    segments.sort(key=lambda s: s.vaddr)
    for a, b in zip(segments, segments[1:]):
        if a.end > b.vaddr:
            raise MalformedTable(f"load segments overlap at {b.vaddr:#x}")
    if not segments:
        raise MalformedTable("no loadable segments")
    span = page_ceil(segments[-1].end) - page_floor(segments[0].vaddr)
    if span > MAX_MAPPING:
        raise MalformedTable(f"load segments span {span:#x} bytes")

    raw_sections = []
    if shoff:
        if shentsize < _SHDR.size:
            raise MalformedTable(f"section header entry size {shentsize} too small")
        if shnum == 0:
            # Extended numbering keeps the real count in section 0.
            shnum = _unpack(_SHDR, data, shoff, "section header")[5]
        if shnum > len(data) // _SHDR.size:
            raise MalformedTable(f"section count {shnum} cannot fit in the file")
        for i in range(shnum):
            raw_sections.append(_unpack(_SHDR, data, shoff + i * shentsize, "section header"))

    shstr = b""
    if raw_sections and shstrndx < len(raw_sections):
        s = raw_sections[shstrndx]
        _check_range(data, s[4], s[5], "section name table")
        shstr = data[s[4]:s[4] + s[5]]
    sections = []
    for sh_name, sh_type, _sflags, sh_addr, sh_offset, sh_size, sh_link, _info, _algn, sh_entsize in raw_sections:
        sname = _cstring(shstr, sh_name, "section") if shstr and sh_name else ""
        sections.append(Section(sname, sh_type, sh_addr, sh_offset, sh_size, sh_link, sh_entsize))

    dynsym: list[SymbolEntry] = []
    dynstr = b""
    symtab = next((s for s in sections if s.sh_type == SHT_DYNSYM), None)
    if symtab is not None:
        if symtab.link >= len(sections) or sections[symtab.link].sh_type != SHT_STRTAB:
            raise MalformedTable("dynsym does not link to a string table")
        strsec = sections[symtab.link]
        _check_range(data, strsec.offset, strsec.size, "dynstr")
        dynstr = data[strsec.offset:strsec.offset + strsec.size]
        entsize = symtab.entsize or _SYM.size
        if entsize < _SYM.size or symtab.size % entsize:
            raise MalformedTable(f"dynsym size {symtab.size} is not a multiple of entry size {entsize}")
        _check_range(data, symtab.offset, symtab.size, "dynsym")
        for i in range(symtab.size // entsize):
            st_name, st_info, _other, st_shndx, st_value, st_size = _SYM.unpack_from(
                data, symtab.offset + i * entsize
            )
            sym_name = _cstring(dynstr, st_name, "symbol")
            kind = {STT_FUNC: SymbolType.FUNC, STT_OBJECT: SymbolType.OBJECT}.get(st_info & 0xF, SymbolType.OTHER)
            dynsym.append(SymbolEntry(sym_name, st_value, st_size, kind, st_shndx != SHN_UNDEF, st_info >> 4))

    return ElfImage(data, machine, tuple(segments), tuple(sections), tuple(dynsym), dynstr, name)


def locate_function(image: ElfImage, symbol: str) -> FunctionSpan:
    """Return the span of the defined function exported as ``symbol``.

    Spans shorter than 8 bytes are accepted but reported with
    :class:`SmallFunctionWarning`; a function that consists of a bare
    return is unusual but legal.
    """
    candidates = image.symbols(symbol)
    if not candidates:
        raise SymbolNotFound(symbol)
    defined = [s for s in candidates if s.defined]
    if not defined:
        raise ZeroSize(f"{symbol} is imported, not defined in {image.name or 'this image'}")
    funcs = [s for s in defined if s.sym_type is SymbolType.FUNC]
    if not funcs:
        raise NotAFunction(f"{symbol} is a {defined[0].sym_type.value} symbol")
    sym = funcs[0]
    if sym.size == 0:
        raise ZeroSize(f"{symbol} has no recorded size")
    if sym.size % 4 or sym.value % 4:
        raise UnalignedSpan(f"{symbol} span {sym.value:#x}+{sym.size} is not word aligned")
    if not any(seg.contains(sym.value, sym.size) for seg in image.load_segments):
        raise MalformedTable(f"{symbol} span {sym.value:#x}+{sym.size} is not inside one load segment")
    if sym.size < 8:
        warnings.warn(f"{symbol} is only {sym.size} bytes", SmallFunctionWarning, stacklevel=2)
    return FunctionSpan(symbol, sym.value, sym.size)


def map_segments(image: ElfImage) -> bytearray:
    """Plain page-aligned mapping of every load segment, indexed from the lowest mapped page."""
    lo, hi = image.mapped_range()
    memory = bytearray(hi - lo)
    for seg in image.load_segments:
        if seg.align >= PAGE_SIZE and seg.vaddr % PAGE_SIZE != seg.file_offset % PAGE_SIZE:
            raise MalformedTable(f"segment at {seg.vaddr:#x} is not page-congruent with its file offset")
        start = seg.vaddr - lo
        memory[start:start + seg.file_size] = image.data[seg.file_offset:seg.file_offset + seg.file_size]
    return memory


@dataclass
class LoadedLibrary:
    name: str
    base: int
    image: ElfImage
    memory: bytearray
    debloated: frozenset[str] = frozenset()
    spans: dict[str, FunctionSpan] = field(default_factory=dict)

    def is_erased(self, vaddr: int) -> bool:
        """True if ``vaddr`` falls inside a span erased at load time."""
        return any(s.vaddr <= vaddr < s.end for s in self.spans.values())

    def erased_symbols(self) -> frozenset[str]:
        """Every exported function whose entry lies in an erased span, aliases included."""
        aliases = (s.name for s in self.image.exported_functions() if self.is_erased(s.value))
        return self.debloated | frozenset(aliases)

    @property
    def lo(self) -> int:
        return self.image.mapped_range()[0]

    @property
    def start(self) -> int:
        return self.base + self.lo

    @property
    def end(self) -> int:
        return self.start + len(self.memory)

    def address_of(self, vaddr: int) -> int:
        return self.base + vaddr

    def offset_of(self, addr: int) -> int:
        """Index into ``memory`` for an absolute address."""
        return addr - self.start


class NativeResolution(NamedTuple):
    address: int
    debloated: bool


class AddressSpace:
    """Hands out page-aligned, non-overlapping bases within one simulated process."""

    def __init__(self, start: int = DEFAULT_BASE) -> None:
        if start % PAGE_SIZE:
            raise ValueError("address space must start on a page boundary")
        self._next = start

    def reserve(self, image: ElfImage) -> int:
        lo, hi = image.mapped_range()
        base = self._next - lo
        self._next += page_ceil(hi - lo)
        return base


def load_library(
    image: ElfImage,
    to_debloat: Iterable[str] = (),
    base: int = DEFAULT_BASE,
    name: str | None = None,
) -> LoadedLibrary:
    """Map ``image`` at ``base`` and erase every function named in ``to_debloat``.

    All names are located before the mapping is touched, so a bad name
    leaves nothing half-erased.  Aliases that share a span are erased once.
    """
    if base % PAGE_SIZE:
        raise ValueError(f"base {base:#x} is not page aligned")
    names = sorted(set(to_debloat))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallFunctionWarning)
        spans = {n: locate_function(image, n) for n in names}
    for span in spans.values():
        if span.size < 4:
            raise SpanTooSmall(f"{span.symbol} is {span.size} bytes, too small for a return stub")

    memory = map_segments(image)
    lo = image.mapped_range()[0]
    unique = {span.key: span for span in spans.values()}
    # Zero everything first so overlapping spans cannot wipe another stub.
    for span in unique.values():
        start = span.vaddr - lo
        memory[start:start + span.size] = bytes(span.size)
    for span in unique.values():
        start = span.vaddr - lo
        memory[start:start + 4] = RET_STUB
    return LoadedLibrary(name or image.name, base, image, memory, frozenset(names), spans)


def resolve_native(lib: LoadedLibrary, symbol: str) -> NativeResolution:
    span = lib.spans.get(symbol)
    if span is None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmallFunctionWarning)
            try:
                span = locate_function(lib.image, symbol)
            except (ZeroSize, NotAFunction, UnalignedSpan, MalformedTable) as exc:
                raise SymbolNotFound(f"{symbol}: {exc}") from exc
    return NativeResolution(lib.address_of(span.vaddr), lib.is_erased(span.vaddr))


def read_region(lib: LoadedLibrary, addr: int, length: int) -> bytes:
    if length < 0:
        raise OutOfRange(f"negative length {length}")
    if addr < lib.start or addr + length > lib.end:
        raise OutOfRange(f"[{addr:#x}, +{length:#x}) is outside the mapping [{lib.start:#x}, {lib.end:#x})")
    off = lib.offset_of(addr)
    return bytes(lib.memory[off:off + length])


def hexdump(data: bytes) -> str:
    """Rows of 16 lowercase hex bytes separated by single spaces."""
    return "\n".join(data[i:i + 16].hex(" ") for i in range(0, len(data), 16))


def read_elf(path: str | Path) -> ElfImage:
    p = Path(path)
    return parse_elf(p.read_bytes(), p.name)
