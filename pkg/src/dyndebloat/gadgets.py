"""ROP gadget search over AArch64 function spans.

For every word-aligned terminator (RET, RET Xn, BR Xn, BLR Xn) inside a
span, the scanner walks backwards one instruction at a time, emitting the
suffix ending at the terminator as a gadget, until the depth limit, the
span start, an invalid word or another branch stops it.  Fixed-width
encoding means only 4-aligned offsets need to be considered.

Gadgets are unique by their byte sequence across the whole report.
``per_span_counts`` deduplicates within each span only.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .aarch64 import InstrClass, Terminator, decode, terminator
from .elf import FunctionSpan, LoadedLibrary
from .errors import MisalignedSpan, SpanMismatch, SpanOutOfRange

DEFAULT_MAX_DEPTH = 10

REPORTED_CLASSES = (
    InstrClass.LOAD_STORE,
    InstrClass.BRANCHING,
    InstrClass.CONDITIONAL_LOGIC,
    InstrClass.ARITHMETIC,
    InstrClass.OTHER,
)


@dataclass(frozen=True)
class Gadget:
    words: tuple[int, ...]
    start_offset: int = field(compare=False)
    span: str = field(default="", compare=False)

    @property
    def length(self) -> int:
        return len(self.words)

    @property
    def terminator(self) -> Terminator:
        kind = terminator(self.words[-1])
        assert kind is not None
        return kind

    @property
    def category(self) -> InstrClass:
        return decode(self.words[0])

    @property
    def raw(self) -> bytes:
        return struct.pack(f"<{len(self.words)}I", *self.words)

    def to_doc(self) -> dict[str, Any]:
        return {
            "words": [f"{w:08x}" for w in self.words],
            "category": self.category.value,
            "length": self.length,
            "terminator": self.terminator.value,
            "span": self.span,
            "offset": self.start_offset,
        }


@dataclass
class GadgetReport:
    gadgets: list[Gadget]
    per_span_counts: dict[str, int]
    length_histogram: dict[int, int]
    category_histogram: dict[InstrClass, int]

    def gadget_set(self) -> frozenset[Gadget]:
        return frozenset(self.gadgets)

    def __len__(self) -> int:
        return len(self.gadgets)

    def to_doc(self) -> dict[str, Any]:
        return {
            "gadgets": [g.to_doc() for g in self.gadgets],
            "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())},
            "category_histogram": {c.value: n for c, n in self.category_histogram.items()},
            "per_span_counts": dict(self.per_span_counts),
        }


@dataclass
class ReductionSummary:
    removed: int
    added: int
    per_span_delta: dict[str, int]
    category_delta: dict[InstrClass, int]
    length_delta: dict[int, int]

    def to_doc(self) -> dict[str, Any]:
        return {
            "removed": self.removed,
            "added": self.added,
            "per_span_delta": dict(self.per_span_delta),
            "category_delta": {c.value: n for c, n in self.category_delta.items()},
            "length_delta": {str(k): v for k, v in sorted(self.length_delta.items())},
        }


def span_label(span: FunctionSpan) -> str:
    return span.symbol or f"{span.vaddr:#x}"


def _span_bounds(code: bytes, span: FunctionSpan, base: int) -> tuple[int, int]:
    start = span.vaddr - base
    if start % 4 or span.size % 4:
        raise MisalignedSpan(f"span {span_label(span)} at {start:#x}+{span.size} is not word aligned")
    if start < 0 or start + span.size > len(code):
        raise SpanOutOfRange(f"span {span_label(span)} at {start:#x}+{span.size} exceeds {len(code)} bytes")
    return start, start + span.size


def _span_gadgets(words: Sequence[int], start: int, label: str, max_depth: int) -> list[Gadget]:
    classes = [decode(w) for w in words]
    found = []
    for t, word in enumerate(words):
        if terminator(word) is None:
            continue
        found.append(Gadget((word,), start + 4 * t, label))
        i = t - 1
        while i >= 0 and t - i < max_depth:
            cls = classes[i]
            if not cls.valid or cls is InstrClass.BRANCHING:
                break
            found.append(Gadget(tuple(words[i:t + 1]), start + 4 * i, label))
            i -= 1
    return found


def find_gadgets(
    code: bytes,
    spans: Iterable[FunctionSpan],
    max_depth: int = DEFAULT_MAX_DEPTH,
    base: int = 0,
) -> GadgetReport:
    """Scan ``code`` inside each span; ``span.vaddr - base`` is the byte offset into ``code``."""
    if max_depth < 1:
        raise ValueError("max_depth must be positive")
    if len(code) % 4:
        raise MisalignedSpan(f"code length {len(code)} is not a multiple of 4")
    spans = list(spans)
    bounds = [_span_bounds(code, s, base) for s in spans]

    unique: dict[Gadget, Gadget] = {}
    per_span: dict[str, int] = {}
    for span, (lo, hi) in zip(spans, bounds):
        label = span_label(span)
        words = struct.unpack_from(f"<{(hi - lo) // 4}I", code, lo)
        local = _span_gadgets(words, span.vaddr, label, max_depth)
        per_span[label] = len(set(local))
        for g in local:
            unique.setdefault(g, g)

    gadgets = sorted(unique.values(), key=lambda g: (g.start_offset, g.length))
    lengths = Counter(g.length for g in gadgets)
    categories = {c: 0 for c in REPORTED_CLASSES}
    for g in gadgets:
        categories[g.category] += 1
    return GadgetReport(gadgets, per_span, dict(sorted(lengths.items())), categories)


def scan_library(
    lib: LoadedLibrary, spans: Iterable[FunctionSpan], max_depth: int = DEFAULT_MAX_DEPTH
) -> GadgetReport:
    return find_gadgets(bytes(lib.memory), spans, max_depth, base=lib.lo)


def compare_reports(before: GadgetReport, after: GadgetReport) -> ReductionSummary:
    if set(before.per_span_counts) != set(after.per_span_counts):
        raise SpanMismatch("reports cover different spans")
    b, a = before.gadget_set(), after.gadget_set()
    per_span = {k: before.per_span_counts[k] - after.per_span_counts[k] for k in before.per_span_counts}
    cats = {c: before.category_histogram.get(c, 0) - after.category_histogram.get(c, 0) for c in REPORTED_CLASSES}
    lengths = {
        k: before.length_histogram.get(k, 0) - after.length_histogram.get(k, 0)
        for k in sorted(set(before.length_histogram) | set(after.length_histogram))
    }
    return ReductionSummary(len(b - a), len(a - b), per_span, cats, lengths)
