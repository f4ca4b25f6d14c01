"""Exception hierarchy shared by all dyndebloat modules."""

from __future__ import annotations


class DebloatError(Exception):
    """Base class for every error raised by this package."""


class FormatError(DebloatError, ValueError):
    """A schema, app definition, trace or state document is malformed."""


class CapabilityError(DebloatError, PermissionError):
    """A mutating operation was attempted through a read-only store handle."""


class IoError(DebloatError, OSError):
    """The underlying file could not be read or written."""


class UnknownMethod(DebloatError, LookupError):
    """An invoked method or native symbol cannot be resolved."""


class ExecutionError(DebloatError):
    """The simulated interpreter hit a fault while running a method body."""


# ELF engine


class ElfError(DebloatError):
    pass


class ElfFormatError(ElfError):
    pass


class UnsupportedMachine(ElfError):
    pass


class MalformedTable(ElfError):
    pass


class SymbolNotFound(ElfError, LookupError):
    pass


class NotAFunction(ElfError):
    pass


class ZeroSize(ElfError):
    pass


class UnalignedSpan(ElfError):
    pass


class SpanTooSmall(ElfError):
    pass


class OutOfRange(ElfError, IndexError):
    pass


class SmallFunctionWarning(UserWarning):
    """A located function is smaller than two instructions."""


# gadget scanner


class GadgetScanError(DebloatError):
    pass


class SpanOutOfRange(GadgetScanError):
    pass


class MisalignedSpan(GadgetScanError):
    pass


class SpanMismatch(GadgetScanError):
    pass
