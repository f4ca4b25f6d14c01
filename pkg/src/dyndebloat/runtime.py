"""A small managed runtime with interpreter, JIT and AOT tiers.

Each app runs in its own :class:`VmInstance`.  The instance reads the app's
debloating schema once, at launch, and keeps that snapshot for its whole
lifetime.  Dispatch of an invocation follows a fixed order:

1. whitelist: a whitelisted method called from any package other than its
   victim returns ``None`` without running;
2. debloat: a listed bytecode method still in the interpreter tier returns
   ``None`` without running and its hotness counter is forced back to 0;
3. compiled: JIT or AOT code runs the body, counter untouched (this is why
   a method compiled before it was listed keeps running);
4. interpret: bump the counter, promote to JIT at the threshold, mark the
   method as profiled, run the body.

Native methods resolve through the loaded ELF image.  If the symbol was
erased at load time the call returns ``None``.  Real hardware would leave
the return register untouched; returning ``None`` keeps the interception
observable.

``None`` is the runtime's null value; every other value is a 64-bit signed
``int``.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .elf import AddressSpace, ElfImage, LoadedLibrary, load_library, read_elf, resolve_native
from .errors import (
    CapabilityError,
    ExecutionError,
    FormatError,
    SymbolNotFound,
    UnknownMethod,
)
from .schema import DebloatSchema, MethodKind, MethodRef, SchemaStore, method_to_doc, parse_method

log = logging.getLogger(__name__)

Value = Optional[int]

DEFAULT_JIT_THRESHOLD = 10
PLATFORM_PREFIXES = ("java.", "javax.", "android.", "com.google.")
MAX_CALL_DEPTH = 256

_I64_MIN = -(1 << 63)
_I64_MAX = (1 << 63) - 1


def wrap_i64(value: int) -> int:
    return (value + (1 << 63)) % (1 << 64) - (1 << 63)


# Bytecode


@dataclass(frozen=True)
class Const:
    dst: int
    imm: int


@dataclass(frozen=True)
class Add:
    dst: int
    a: int
    b: int


@dataclass(frozen=True)
class Call:
    dst: int
    callee: MethodRef
    args: tuple[int, ...]


@dataclass(frozen=True)
class CallNative:
    dst: int
    library: str
    symbol: str
    args: tuple[int, ...]


@dataclass(frozen=True)
class Ret:
    src: int


@dataclass(frozen=True)
class RetVoid:
    pass


Instruction = Union[Const, Add, Call, CallNative, Ret, RetVoid]


@dataclass(frozen=True)
class ReturnConst:
    value: int


@dataclass(frozen=True)
class Echo:
    index: int


NativeBehavior = Union[ReturnConst, Echo]


@dataclass(frozen=True)
class MethodDef:
    ref: MethodRef
    registers: int
    body: tuple[Instruction, ...]

    def __post_init__(self) -> None:
        if self.ref.kind is not MethodKind.BYTECODE:
            raise FormatError(f"{self.ref} is not a bytecode method")
        if self.registers < 0:
            raise FormatError(f"{self.ref} declares a negative register count")


@dataclass
class AppDefinition:
    package: str
    methods: list[MethodDef]
    native_behaviors: dict[tuple[str, str], NativeBehavior] = field(default_factory=dict)
    libraries: list[Union[Path, ElfImage]] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen = set()
        for m in self.methods:
            if m.ref.package != self.package:
                raise FormatError(f"{m.ref} does not belong to {self.package!r}")
            if m.ref in seen:
                raise FormatError(f"duplicate method {m.ref}")
            seen.add(m.ref)


class EntryState(enum.Enum):
    INTERPRETER = "Interpreter"
    JIT_COMPILED = "JitCompiled"
    AOT_COMPILED = "AotCompiled"


@dataclass
class ArtMethodRecord:
    ref: MethodRef
    registers: int
    body: tuple[Instruction, ...]
    entry_state: EntryState = EntryState.INTERPRETER
    counter: int = 0
    in_profile: bool = False

    @property
    def compiled(self) -> bool:
        return self.entry_state is not EntryState.INTERPRETER


class EventKind(enum.Enum):
    GRACEFUL_TERMINATION = "GracefulTermination"
    WHITELIST_BLOCKED = "WhitelistBlocked"
    JIT_COMPILE = "JitCompile"
    AOT_COMPILE = "AotCompile"
    NATIVE_RESOLVED = "NativeResolved"
    LIBRARY_LOADED = "LibraryLoaded"


@dataclass(frozen=True)
class Event:
    step: int
    kind: EventKind
    method: MethodRef | None = None
    caller_package: str | None = None
    detail: str | None = None

    def to_doc(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "step": self.step,
            "kind": self.kind.value,
            "method": method_to_doc(self.method) if self.method else None,
            "caller_package": self.caller_package,
        }
        if self.detail is not None:
            doc["detail"] = self.detail
        return doc


@dataclass(frozen=True)
class TraceEntry:
    caller_package: str
    ref: MethodRef
    args: tuple[Value, ...] = ()


@dataclass
class TraceReport:
    invoked: set[MethodRef] = field(default_factory=set)
    debloated: set[MethodRef] = field(default_factory=set)
    results: list[Value] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)
    error: str | None = None

    @property
    def aborted(self) -> bool:
        return self.error is not None

    def to_doc(self) -> dict[str, Any]:
        def refs(items: Iterable[MethodRef]) -> list[dict[str, str]]:
            return [method_to_doc(r) for r in sorted(items, key=lambda r: r._key())]

        return {
            "invoked": refs(self.invoked),
            "debloated": refs(self.debloated),
            "results": list(self.results),
            "events": [e.to_doc() for e in self.events],
            "aborted": self.error,
        }


def native_ref(package: str, library: str, symbol: str) -> MethodRef:
    return MethodRef.native(package, library, symbol)


def _normalize(ref: MethodRef) -> MethodRef:
    # Native methods are identified by library and symbol alone.
    if ref.is_native and ref.descriptor:
        return MethodRef.native(ref.package, ref.library, ref.method_name)
    return ref


def _param_count(descriptor: str) -> int:
    inner = descriptor[1:descriptor.index(")")]
    return len(inner.split(",")) if inner else 0


class _Recorder:
    def __init__(self) -> None:
        self.invoked: set[MethodRef] = set()
        self.debloated: set[MethodRef] = set()


class VmInstance:
    """Per-app runtime state.  Not thread-safe; serialize calls externally."""

    def __init__(
        self,
        package: str,
        methods: dict[MethodRef, ArtMethodRecord],
        schema: DebloatSchema,
        jit_threshold: int = DEFAULT_JIT_THRESHOLD,
        native_behaviors: Mapping[tuple[str, str], NativeBehavior] | None = None,
        odex: Iterable[MethodRef] = (),
        platform_prefixes: Sequence[str] = PLATFORM_PREFIXES,
        graceful_termination: bool | None = None,
    ) -> None:
        if jit_threshold < 1:
            raise ValueError("jit_threshold must be positive")
        self.package = package
        self.methods = methods
        self.schema_snapshot = schema
        self.jit_threshold = jit_threshold
        self.native_behaviors = dict(native_behaviors or {})
        self.odex: set[MethodRef] = set(odex)
        self.platform_prefixes = tuple(platform_prefixes)
        self.graceful_termination = (
            schema.graceful_termination if graceful_termination is None else graceful_termination
        )
        self.loaded_libraries: dict[str, LoadedLibrary] = {}
        self.event_log: list[Event] = []
        self.intercepted: set[MethodRef] = set()
        self.step = 0
        self._resolved: set[tuple[str, str]] = set()
        self._whitelist: dict[MethodRef, set[str]] = {}
        for ref, victim in schema.whitelist:
            self._whitelist.setdefault(_normalize(ref), set()).add(victim)
        self._debloat_bytecode = frozenset(schema.bytecode_methods)
        self._compiled_at_launch = frozenset(r for r, rec in methods.items() if rec.compiled)
        self._recorders: list[_Recorder] = []
        self._depth = 0

    # schema views

    def is_platform(self, ref: MethodRef) -> bool:
        return not ref.is_native and ref.class_name.startswith(self.platform_prefixes)

    def effective_schema(self) -> frozenset[MethodRef]:
        """Methods whose invocations this instance will intercept.

        Listed bytecode methods of this package that are not platform APIs and
        were still interpreted at launch, plus native methods whose entry point
        was erased when their library was loaded (aliases included).
        """
        out = set()
        for ref in self._debloat_bytecode:
            rec = self.methods.get(ref)
            if ref.package != self.package or self.is_platform(ref):
                continue
            if rec is not None and rec.entry_state is EntryState.INTERPRETER and ref not in self._compiled_at_launch:
                out.add(ref)
        for lib in self.loaded_libraries.values():
            out.update(native_ref(self.package, lib.name, s) for s in lib.erased_symbols())
        return frozenset(out)

    # events

    def _emit(self, kind: EventKind, method: MethodRef | None = None, caller: str | None = None, detail: str | None = None) -> None:
        event = Event(self.step, kind, method, caller, detail)
        self.event_log.append(event)
        log.debug("%s", event)

    def _terminate(self, ref: MethodRef, caller: str) -> None:
        self.intercepted.add(ref)
        for r in self._recorders:
            r.debloated.add(ref)
        if self.graceful_termination:
            self._emit(EventKind.GRACEFUL_TERMINATION, ref, caller)

    # dispatch

    def invoke(self, caller_package: str, ref: MethodRef, args: Sequence[Value] = ()) -> Value:
        self.step += 1
        ref = _normalize(ref)
        if ref.is_native:
            return self._invoke_native(caller_package, ref, args)

        rec = self.methods.get(ref)
        if rec is None:
            raise UnknownMethod(str(ref))
        for r in self._recorders:
            r.invoked.add(ref)

        victims = self._whitelist.get(ref)
        if victims is not None and caller_package not in victims:
            self._emit(EventKind.WHITELIST_BLOCKED, ref, caller_package)
            if self.graceful_termination:
                self._emit(EventKind.GRACEFUL_TERMINATION, ref, caller_package)
            return None

        if (
            ref in self._debloat_bytecode
            and ref.package == self.package
            and not self.is_platform(ref)
            and rec.entry_state is EntryState.INTERPRETER
        ):
            rec.counter = 0
            self._terminate(ref, caller_package)
            return None

        if rec.entry_state is EntryState.INTERPRETER:
            rec.counter += 1
            if rec.counter >= self.jit_threshold:
                rec.entry_state = EntryState.JIT_COMPILED
                self._emit(EventKind.JIT_COMPILE, ref)
            rec.in_profile = True
        return self._execute(rec, args)

    def _invoke_native(self, caller_package: str, ref: MethodRef, args: Sequence[Value]) -> Value:
        key = (ref.library, ref.method_name)
        lib = self.loaded_libraries.get(ref.library)
        behavior = self.native_behaviors.get(key)
        if lib is None and behavior is None:
            raise UnknownMethod(str(ref))
        debloated = False
        if lib is not None:
            try:
                resolution = resolve_native(lib, ref.method_name)
            except SymbolNotFound:
                raise UnknownMethod(str(ref)) from None
            debloated = resolution.debloated
        if key not in self._resolved:
            self._resolved.add(key)
            self._emit(EventKind.NATIVE_RESOLVED, ref, caller_package)
        for r in self._recorders:
            r.invoked.add(ref)

        victims = self._whitelist.get(ref)
        if victims is not None and caller_package not in victims:
            self._emit(EventKind.WHITELIST_BLOCKED, ref, caller_package)
            if self.graceful_termination:
                self._emit(EventKind.GRACEFUL_TERMINATION, ref, caller_package)
            return None
        if debloated:
            self._terminate(ref, caller_package)
            return None
        if behavior is None:
            raise UnknownMethod(f"{ref} has no declared behavior")
        if isinstance(behavior, ReturnConst):
            return behavior.value
        if not 0 <= behavior.index < len(args):
            raise ExecutionError(f"{ref} echoes argument {behavior.index} of {len(args)}")
        return args[behavior.index]

    def _execute(self, rec: ArtMethodRecord, args: Sequence[Value]) -> Value:
        if len(args) != _param_count(rec.ref.descriptor):
            raise ExecutionError(f"{rec.ref} takes {_param_count(rec.ref.descriptor)} arguments, got {len(args)}")
        if len(args) > rec.registers:
            raise ExecutionError(f"{rec.ref} has {rec.registers} registers for {len(args)} arguments")
        if self._depth >= MAX_CALL_DEPTH:
            raise ExecutionError(f"call depth exceeds {MAX_CALL_DEPTH}")
        regs: list[Value] = [None] * rec.registers
        regs[: len(args)] = args

        def reg(i: int) -> int:
            if not 0 <= i < rec.registers:
                raise ExecutionError(f"{rec.ref}: register r{i} out of range")
            return i

        self._depth += 1
        try:
            for insn in rec.body:
                if isinstance(insn, Const):
                    regs[reg(insn.dst)] = insn.imm
                elif isinstance(insn, Add):
                    a, b = regs[reg(insn.a)], regs[reg(insn.b)]
                    if a is None or b is None:
                        raise ExecutionError(f"{rec.ref}: add on null operand")
                    regs[reg(insn.dst)] = wrap_i64(a + b)
                elif isinstance(insn, Call):
                    call_args = [regs[reg(i)] for i in insn.args]
                    regs[reg(insn.dst)] = self.invoke(self.package, insn.callee, call_args)
                elif isinstance(insn, CallNative):
                    call_args = [regs[reg(i)] for i in insn.args]
                    target = native_ref(self.package, insn.library, insn.symbol)
                    regs[reg(insn.dst)] = self.invoke(self.package, target, call_args)
                elif isinstance(insn, Ret):
                    return regs[reg(insn.src)]
                else:
                    return None
            return None
        finally:
            self._depth -= 1

    # tracing and compilation

    def run_trace(self, trace: Iterable[TraceEntry]) -> TraceReport:
        recorder = _Recorder()
        report = TraceReport(invoked=recorder.invoked, debloated=recorder.debloated)
        first_event = len(self.event_log)
        self._recorders.append(recorder)
        try:
            for entry in trace:
                try:
                    report.results.append(self.invoke(entry.caller_package, entry.ref, entry.args))
                except (UnknownMethod, ExecutionError) as exc:
                    report.error = f"{type(exc).__name__}: {exc}"
                    break
        finally:
            self._recorders.remove(recorder)
            self._depth = 0
        report.events = self.event_log[first_event:]
        return report

    def aot_compile(self) -> set[MethodRef]:
        for ref, rec in self.methods.items():
            if rec.in_profile and ref not in self.intercepted and rec.entry_state is not EntryState.AOT_COMPILED:
                rec.entry_state = EntryState.AOT_COMPILED
                self.odex.add(ref)
                self._emit(EventKind.AOT_COMPILE, ref)
        return set(self.odex)

    def clear_app_data(self) -> None:
        self.odex.clear()
        for rec in self.methods.values():
            rec.in_profile = False

    # persisted state

    def state_doc(self) -> dict[str, Any]:
        key = lambda r: r._key()  # noqa: E731
        return {
            "package": self.package,
            "jit_threshold": self.jit_threshold,
            "methods": [
                {
                    "ref": method_to_doc(ref),
                    "counter": rec.counter,
                    "entry_state": rec.entry_state.value,
                    "in_profile": rec.in_profile,
                }
                for ref, rec in sorted(self.methods.items(), key=lambda kv: key(kv[0]))
            ],
            "odex": [method_to_doc(r) for r in sorted(self.odex, key=key)],
            "intercepted": [method_to_doc(r) for r in sorted(self.intercepted, key=key)],
        }

    def restore_state(self, doc: Any) -> None:
        """Overlay counters, tiers, profile bits and odex from a :meth:`state_doc`."""
        try:
            if doc["package"] != self.package:
                raise FormatError(f"state belongs to {doc['package']!r}, not {self.package!r}")
            for item in doc["methods"]:
                ref = parse_method(item["ref"])
                rec = self.methods.get(ref)
                if rec is None:
                    raise FormatError(f"state names unknown method {ref}")
                counter = item["counter"]
                if not isinstance(counter, int) or counter < 0:
                    raise FormatError(f"bad counter for {ref}")
                rec.counter = counter
                rec.entry_state = EntryState(item["entry_state"])
                rec.in_profile = bool(item["in_profile"])
            self.odex = {parse_method(d) for d in doc["odex"]}
            self.intercepted = {parse_method(d) for d in doc.get("intercepted", [])}
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"corrupt instance state: {exc}") from None


# Loading


def load_app(
    appdef: AppDefinition,
    store: SchemaStore | DebloatSchema | None,
    jit_threshold: int = DEFAULT_JIT_THRESHOLD,
    odex_carryover: Iterable[MethodRef] | None = None,
    *,
    platform_prefixes: Sequence[str] = PLATFORM_PREFIXES,
    graceful_termination: bool | None = None,
    address_space: AddressSpace | None = None,
) -> VmInstance:
    """Launch ``appdef``: snapshot its schema, build method records, load libraries.

    ``store`` must be a read-only handle.  A bare :class:`DebloatSchema` is
    accepted for in-memory use, and ``None`` means no schema.
    """
    if isinstance(store, SchemaStore):
        if store.writable:
            raise CapabilityError("apps read schemas through a read-only handle")
        schema = store.get(appdef.package) or DebloatSchema.empty(appdef.package)
    elif isinstance(store, DebloatSchema):
        if store.package != appdef.package:
            raise FormatError(f"schema for {store.package!r} given to {appdef.package!r}")
        schema = store
    else:
        schema = DebloatSchema.empty(appdef.package)

    carry = set(odex_carryover or ())
    methods = {}
    for m in appdef.methods:
        state = EntryState.AOT_COMPILED if m.ref in carry else EntryState.INTERPRETER
        methods[m.ref] = ArtMethodRecord(m.ref, m.registers, m.body, state)
    vm = VmInstance(
        appdef.package,
        methods,
        schema,
        jit_threshold,
        appdef.native_behaviors,
        odex=(r for r in carry if r in methods),
        platform_prefixes=platform_prefixes,
        graceful_termination=graceful_termination,
    )

    space = address_space or AddressSpace()
    for entry in appdef.libraries:
        image = entry if isinstance(entry, ElfImage) else read_elf(entry)
        name = image.name or Path(str(entry)).name
        lib = load_library(image, schema.native_symbols(name), base=space.reserve(image), name=name)
        vm.loaded_libraries[name] = lib
        vm._emit(EventKind.LIBRARY_LOADED, detail=name)
    return vm


def relaunch(
    appdef: AppDefinition,
    store: SchemaStore | DebloatSchema | None,
    prior_vm: VmInstance,
    **kwargs: Any,
) -> VmInstance:
    kwargs.setdefault("jit_threshold", prior_vm.jit_threshold)
    kwargs.setdefault("platform_prefixes", prior_vm.platform_prefixes)
    vm = load_app(appdef, store, odex_carryover=prior_vm.odex, **kwargs)
    return vm


def clear_app_data(prior_vm: VmInstance) -> None:
    prior_vm.clear_app_data()


def invoke(vm: VmInstance, caller_package: str, ref: MethodRef, args: Sequence[Value] = ()) -> Value:
    return vm.invoke(caller_package, ref, args)


def run_trace(vm: VmInstance, trace: Iterable[TraceEntry]) -> TraceReport:
    return vm.run_trace(trace)


def aot_compile(vm: VmInstance) -> set[MethodRef]:
    return vm.aot_compile()


# JSON documents


def _int(value: Any, what: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise FormatError(f"{what} must be an integer, got {value!r}")
    return value


def _value(value: Any) -> Value:
    if value is None:
        return None
    v = _int(value, "argument")
    if not _I64_MIN <= v <= _I64_MAX:
        raise FormatError(f"argument {v} is outside the 64-bit range")
    return v


def parse_instruction(item: Any) -> Instruction:
    if not isinstance(item, list) or not item or not isinstance(item[0], str):
        raise FormatError(f"instruction must be a non-empty array, got {item!r}")
    op, *rest = item
    try:
        if op == "const" and len(rest) == 2:
            imm = _int(rest[1], "immediate")
            if not _I64_MIN <= imm <= _I64_MAX:
                raise FormatError(f"immediate {imm} is outside the 64-bit range")
            return Const(_int(rest[0], "register"), imm)
        if op == "add" and len(rest) == 3:
            return Add(*(_int(r, "register") for r in rest))
        if op == "call" and len(rest) == 3:
            return Call(_int(rest[0], "register"), parse_method(rest[1]), tuple(_int(r, "register") for r in rest[2]))
        if op == "callnative" and len(rest) == 4:
            if not isinstance(rest[1], str) or not isinstance(rest[2], str):
                raise FormatError("callnative needs library and symbol strings")
            return CallNative(_int(rest[0], "register"), rest[1], rest[2], tuple(_int(r, "register") for r in rest[3]))
        if op == "ret" and len(rest) == 1:
            return Ret(_int(rest[0], "register"))
        if op == "retvoid" and not rest:
            return RetVoid()
    except TypeError:
        raise FormatError(f"malformed instruction {item!r}") from None
    raise FormatError(f"unknown instruction {item!r}")


def instruction_to_doc(insn: Instruction) -> list[Any]:
    if isinstance(insn, Const):
        return ["const", insn.dst, insn.imm]
    if isinstance(insn, Add):
        return ["add", insn.dst, insn.a, insn.b]
    if isinstance(insn, Call):
        return ["call", insn.dst, method_to_doc(insn.callee), list(insn.args)]
    if isinstance(insn, CallNative):
        return ["callnative", insn.dst, insn.library, insn.symbol, list(insn.args)]
    if isinstance(insn, Ret):
        return ["ret", insn.src]
    return ["retvoid"]


def _parse_behavior(item: Any) -> NativeBehavior:
    if isinstance(item, list) and len(item) == 2:
        if item[0] == "return_const":
            return ReturnConst(_int(item[1], "constant"))
        if item[0] == "echo":
            return Echo(_int(item[1], "argument index"))
    raise FormatError(f"unknown native behavior {item!r}")


def appdef_from_doc(doc: Any, base_dir: Path | None = None) -> AppDefinition:
    if not isinstance(doc, dict):
        raise FormatError("app definition must be a JSON object")
    unknown = set(doc) - {"package", "methods", "native_behaviors", "libraries"}
    if unknown:
        raise FormatError(f"unknown field(s) in app definition: {sorted(unknown)}")
    try:
        package = doc["package"]
        methods = []
        for m in doc["methods"]:
            if set(m) != {"ref", "registers", "body"}:
                raise FormatError(f"method entry must have exactly ref, registers, body: {sorted(m)}")
            methods.append(
                MethodDef(parse_method(m["ref"]), _int(m["registers"], "registers"), tuple(parse_instruction(i) for i in m["body"]))
            )
        behaviors = {}
        for b in doc.get("native_behaviors", []):
            behaviors[(b["library"], b["symbol"])] = _parse_behavior(b["behavior"])
        libraries = []
        for p in doc.get("libraries", []):
            path = Path(p)
            libraries.append(path if path.is_absolute() or base_dir is None else base_dir / path)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed app definition: {exc!r}") from None
    if not isinstance(package, str):
        raise FormatError("package must be a string")
    return AppDefinition(package, methods, behaviors, libraries)


def appdef_to_doc(appdef: AppDefinition) -> dict[str, Any]:
    return {
        "package": appdef.package,
        "methods": [
            {"ref": method_to_doc(m.ref), "registers": m.registers, "body": [instruction_to_doc(i) for i in m.body]}
            for m in appdef.methods
        ],
        "native_behaviors": [
            {
                "library": lib,
                "symbol": sym,
                "behavior": ["return_const", b.value] if isinstance(b, ReturnConst) else ["echo", b.index],
            }
            for (lib, sym), b in appdef.native_behaviors.items()
        ],
        "libraries": [str(p) for p in appdef.libraries if not isinstance(p, ElfImage)],
    }


def load_appdef(path: str | Path) -> AppDefinition:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return appdef_from_doc(doc, path.parent)


def trace_from_doc(doc: Any) -> list[TraceEntry]:
    if not isinstance(doc, list):
        raise FormatError("trace must be a JSON array")
    out = []
    for item in doc:
        if not isinstance(item, dict) or set(item) - {"caller_package", "ref", "args"}:
            raise FormatError(f"bad trace entry {item!r}")
        try:
            caller = item["caller_package"]
            ref = parse_method(item["ref"])
        except KeyError as exc:
            raise FormatError(f"trace entry missing {exc}") from None
        if not isinstance(caller, str):
            raise FormatError("caller_package must be a string")
        args = item.get("args", [])
        if not isinstance(args, list):
            raise FormatError("args must be an array")
        out.append(TraceEntry(caller, ref, tuple(_value(a) for a in args)))
    return out


def trace_to_doc(trace: Iterable[TraceEntry]) -> list[dict[str, Any]]:
    return [{"caller_package": e.caller_package, "ref": method_to_doc(e.ref), "args": list(e.args)} for e in trace]


__all__ = [
    "Value",
    "Const",
    "Add",
    "Call",
    "CallNative",
    "Ret",
    "RetVoid",
    "ReturnConst",
    "Echo",
    "MethodDef",
    "AppDefinition",
    "EntryState",
    "ArtMethodRecord",
    "EventKind",
    "Event",
    "TraceEntry",
    "TraceReport",
    "VmInstance",
    "load_app",
    "relaunch",
    "clear_app_data",
    "invoke",
    "run_trace",
    "aot_compile",
    "load_appdef",
    "appdef_from_doc",
    "appdef_to_doc",
    "trace_from_doc",
    "trace_to_doc",
]
