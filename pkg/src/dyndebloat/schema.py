"""Debloating schemas and the capability-split schema store.

A schema names, per application package, the bytecode and native methods
that must not run, plus optional whitelist entries that restrict a method
to a single caller package.  The store is one JSON file mapping package to
schema document.  Consumers open it read-only; only the management side
opens it read-write.
"""

from __future__ import annotations

import enum
import json
import os
import re
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .errors import CapabilityError, FormatError, IoError

__all__ = [
    "MethodKind",
    "MethodRef",
    "DebloatSchema",
    "StoreMode",
    "SchemaStore",
    "parse_method",
    "method_to_doc",
    "parse_schema",
    "schema_to_doc",
    "serialize_schema",
    "open_store",
    "parse_method_spec",
]

_TYPE = r"(?:I64|V\?)"
_DESCRIPTOR_RE = re.compile(rf"^\((?:{_TYPE}(?:,{_TYPE})*)?\){_TYPE}$")

_METHOD_FIELDS = ("package", "kind", "class_name", "method_name", "descriptor", "library")
_SCHEMA_FIELDS = ("package", "bytecode_methods", "native_methods", "whitelist", "graceful_termination")


class MethodKind(enum.Enum):
    BYTECODE = "bytecode"
    NATIVE = "native"


@dataclass(frozen=True)
class MethodRef:
    package: str
    kind: MethodKind
    class_name: str
    method_name: str
    descriptor: str = ""
    library: str = ""

    def __post_init__(self) -> None:
        if not self.package or any(c.isspace() for c in self.package):
            raise FormatError(f"invalid package name {self.package!r}")
        if not self.method_name:
            raise FormatError("method_name must be non-empty")
        if self.kind is MethodKind.NATIVE:
            if not self.library:
                raise FormatError(f"native method {self.method_name!r} has no library")
            if self.class_name:
                raise FormatError(f"native method {self.method_name!r} must not carry a class_name")
            if self.descriptor and not _DESCRIPTOR_RE.match(self.descriptor):
                raise FormatError(f"bad descriptor {self.descriptor!r}")
        else:
            if not self.class_name or not self.descriptor:
                raise FormatError(f"bytecode method {self.method_name!r} needs class_name and descriptor")
            if self.library:
                raise FormatError(f"bytecode method {self.method_name!r} must not carry a library")
            if not _DESCRIPTOR_RE.match(self.descriptor):
                raise FormatError(f"bad descriptor {self.descriptor!r}")

    def _key(self) -> tuple[str, ...]:
        return (self.package, self.kind.value, self.class_name, self.method_name, self.descriptor, self.library)

    @classmethod
    def bytecode(cls, package: str, class_name: str, method_name: str, descriptor: str) -> MethodRef:
        return cls(package, MethodKind.BYTECODE, class_name, method_name, descriptor)

    @classmethod
    def native(cls, package: str, library: str, symbol: str, descriptor: str = "") -> MethodRef:
        return cls(package, MethodKind.NATIVE, "", symbol, descriptor, library)

    @property
    def is_native(self) -> bool:
        return self.kind is MethodKind.NATIVE

    def __str__(self) -> str:
        if self.is_native:
            return f"{self.package}/{self.library}!{self.method_name}"
        return f"{self.package}/{self.class_name}.{self.method_name}{self.descriptor}"


def _sort_key(ref: MethodRef) -> tuple[str, ...]:
    return ref._key()


@dataclass(frozen=True)
class DebloatSchema:
    package: str
    bytecode_methods: frozenset[MethodRef] = frozenset()
    native_methods: frozenset[MethodRef] = frozenset()
    whitelist: frozenset[tuple[MethodRef, str]] = frozenset()
    graceful_termination: bool = True

    def __post_init__(self) -> None:
        # Accept any iterable on construction; store frozensets.
        object.__setattr__(self, "bytecode_methods", frozenset(self.bytecode_methods))
        object.__setattr__(self, "native_methods", frozenset(self.native_methods))
        object.__setattr__(self, "whitelist", frozenset(self.whitelist))
        if not self.package or any(c.isspace() for c in self.package):
            raise FormatError(f"invalid package name {self.package!r}")
        for ref in self.bytecode_methods:
            if ref.kind is not MethodKind.BYTECODE:
                raise FormatError(f"{ref} listed as bytecode but is native")
            self._check_owner(ref)
        for ref in self.native_methods:
            if ref.kind is not MethodKind.NATIVE:
                raise FormatError(f"{ref} listed as native but is bytecode")
            self._check_owner(ref)
        for ref, victim in self.whitelist:
            self._check_owner(ref)
            if not victim or any(c.isspace() for c in victim):
                raise FormatError(f"invalid victim package {victim!r}")

    def _check_owner(self, ref: MethodRef) -> None:
        if ref.package != self.package:
            raise FormatError(f"{ref} does not belong to package {self.package!r}")

    @classmethod
    def empty(cls, package: str) -> DebloatSchema:
        return cls(package)

    def __contains__(self, ref: object) -> bool:
        return ref in self.bytecode_methods or ref in self.native_methods

    def native_symbols(self, library: str) -> frozenset[str]:
        """Symbol names scheduled for erasure in the named library."""
        return frozenset(r.method_name for r in self.native_methods if r.library == library)

    def without(self, ref: MethodRef) -> DebloatSchema:
        return DebloatSchema(
            self.package,
            self.bytecode_methods - {ref},
            self.native_methods - {ref},
            frozenset(e for e in self.whitelist if e[0] != ref),
            self.graceful_termination,
        )


# Serialization


def method_to_doc(ref: MethodRef) -> dict[str, str]:
    return {
        "package": ref.package,
        "kind": ref.kind.value,
        "class_name": ref.class_name,
        "method_name": ref.method_name,
        "descriptor": ref.descriptor,
        "library": ref.library,
    }


def _require_keys(doc: Any, expected: tuple[str, ...], what: str) -> dict:
    if not isinstance(doc, dict):
        raise FormatError(f"{what} must be a JSON object")
    keys = set(doc)
    unknown = keys - set(expected)
    if unknown:
        raise FormatError(f"unknown field(s) in {what}: {sorted(unknown)}")
    missing = set(expected) - keys
    if missing:
        raise FormatError(f"missing field(s) in {what}: {sorted(missing)}")
    return doc


def parse_method(doc: Any) -> MethodRef:
    doc = _require_keys(doc, _METHOD_FIELDS, "method document")
    for key in _METHOD_FIELDS:
        if not isinstance(doc[key], str):
            raise FormatError(f"method field {key!r} must be a string")
    try:
        kind = MethodKind(doc["kind"])
    except ValueError:
        raise FormatError(f"unknown method kind {doc['kind']!r}") from None
    return MethodRef(
        doc["package"], kind, doc["class_name"], doc["method_name"], doc["descriptor"], doc["library"]
    )


def _parse_method_list(items: Any, what: str) -> list[MethodRef]:
    if not isinstance(items, list):
        raise FormatError(f"{what} must be a list")
    return [parse_method(item) for item in items]


def schema_from_doc(doc: Any) -> DebloatSchema:
    doc = _require_keys(doc, _SCHEMA_FIELDS, "schema document")
    if not isinstance(doc["package"], str):
        raise FormatError("package must be a string")
    if not isinstance(doc["graceful_termination"], bool):
        raise FormatError("graceful_termination must be a boolean")
    if not isinstance(doc["whitelist"], list):
        raise FormatError("whitelist must be a list")
    whitelist = []
    for entry in doc["whitelist"]:
        entry = _require_keys(entry, ("method", "victim_package"), "whitelist entry")
        if not isinstance(entry["victim_package"], str):
            raise FormatError("victim_package must be a string")
        whitelist.append((parse_method(entry["method"]), entry["victim_package"]))
    return DebloatSchema(
        doc["package"],
        _parse_method_list(doc["bytecode_methods"], "bytecode_methods"),
        _parse_method_list(doc["native_methods"], "native_methods"),
        whitelist,
        doc["graceful_termination"],
    )


def parse_schema(text: str | bytes) -> DebloatSchema:
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"schema is not valid JSON: {exc}") from None
    return schema_from_doc(doc)


def schema_to_doc(schema: DebloatSchema) -> dict[str, Any]:
    """Canonical document form; lists are sorted so equal schemas serialize identically."""
    return {
        "package": schema.package,
        "bytecode_methods": [method_to_doc(r) for r in sorted(schema.bytecode_methods, key=_sort_key)],
        "native_methods": [method_to_doc(r) for r in sorted(schema.native_methods, key=_sort_key)],
        "whitelist": [
            {"method": method_to_doc(r), "victim_package": v}
            for r, v in sorted(schema.whitelist, key=lambda e: (_sort_key(e[0]), e[1]))
        ],
        "graceful_termination": schema.graceful_termination,
    }


def _dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def serialize_schema(schema: DebloatSchema) -> str:
    return _dumps(schema_to_doc(schema))


def parse_method_spec(package: str, spec: str) -> MethodRef:
    """Parse a compact method reference used on the command line.

    ``lib.so!symbol`` (optionally followed by a descriptor) names a native method; ``pkg.Class.method(I64)V?`` names a
    bytecode method.  A JSON method document is accepted as well.
    """
    spec = spec.strip()
    if spec.startswith("{"):
        try:
            return parse_method(json.loads(spec))
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad method document: {exc}") from None
    if "!" in spec:
        library, _, symbol = spec.partition("!")
        symbol, paren, desc = symbol.partition("(")
        return MethodRef.native(package, library, symbol, paren + desc)
    match = re.match(r"^(?P<qual>[^()]+)(?P<desc>\(.*)$", spec)
    if not match or "." not in match["qual"]:
        raise FormatError(f"cannot parse method reference {spec!r}")
    class_name, _, name = match["qual"].rpartition(".")
    return MethodRef.bytecode(package, class_name, name, match["desc"])


# Store


class StoreMode(enum.Enum):
    READ_ONLY = "ro"
    READ_WRITE = "rw"


class SchemaStore:
    """Handle on a schema store file.

    The mode is fixed at open time.  Read-only handles serve lookups only;
    every mutator raises :class:`CapabilityError`.  Writes go to a temporary
    file in the same directory and are renamed over the store, so readers
    see either the old or the new contents.
    """

    __slots__ = ("_path", "_mode")

    def __init__(self, path: str | os.PathLike, mode: StoreMode) -> None:
        self._path = Path(path)
        self._mode = mode

    @property
    def path(self) -> Path:
        return self._path

    @property
    def mode(self) -> StoreMode:
        return self._mode

    @property
    def writable(self) -> bool:
        return self._mode is StoreMode.READ_WRITE

    def __repr__(self) -> str:
        return f"SchemaStore({str(self._path)!r}, {self._mode.name})"

    def _load(self) -> dict[str, DebloatSchema]:
        try:
            raw = self._path.read_bytes()
        except OSError as exc:
            raise IoError(f"cannot read store {self._path}: {exc}") from exc
        try:
            doc = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"store {self._path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise FormatError("store must be a JSON object mapping package to schema")
        out = {}
        for package, schema_doc in doc.items():
            schema = schema_from_doc(schema_doc)
            if schema.package != package:
                raise FormatError(f"store key {package!r} holds schema for {schema.package!r}")
            out[package] = schema
        return out

    def _require_write(self) -> None:
        if self._mode is not StoreMode.READ_WRITE:
            raise CapabilityError(f"store {self._path} is opened read-only")

    def _save(self, schemas: dict[str, DebloatSchema]) -> None:
        text = _dumps({pkg: schema_to_doc(schemas[pkg]) for pkg in sorted(schemas)})
        directory = self._path.parent
        try:
            fd, tmp = tempfile.mkstemp(prefix=f".{self._path.name}.", dir=directory)
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(text)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self._path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        except OSError as exc:
            raise IoError(f"cannot write store {self._path}: {exc}") from exc

    def get(self, package: str) -> DebloatSchema | None:
        return self._load().get(package)

    def packages(self) -> list[str]:
        return sorted(self._load())

    def put(self, schema: DebloatSchema) -> None:
        self._require_write()
        schemas = self._load()
        schemas[schema.package] = schema
        self._save(schemas)

    def remove_method(self, package: str, ref: MethodRef) -> None:
        self._require_write()
        schemas = self._load()
        current = schemas.get(package)
        if current is None:
            return
        updated = current.without(ref)
        if updated == current:
            return
        schemas[package] = updated
        self._save(schemas)


def open_store(path: str | os.PathLike, mode: StoreMode | str = StoreMode.READ_ONLY) -> SchemaStore:
    mode = StoreMode(mode) if isinstance(mode, str) else mode
    path = Path(path)
    if mode is StoreMode.READ_ONLY:
        if not path.is_file():
            raise IoError(f"store {path} does not exist")
    elif not path.exists():
        handle = SchemaStore(path, mode)
        handle._save({})
        return handle
    return SchemaStore(path, mode)


def store_get(handle: SchemaStore, package: str) -> DebloatSchema | None:
    return handle.get(package)


def store_put(handle: SchemaStore, schema: DebloatSchema) -> None:
    handle.put(schema)


def store_remove_method(handle: SchemaStore, package: str, ref: MethodRef) -> None:
    handle.remove_method(package, ref)


def iter_refs(schema: DebloatSchema) -> Iterable[MethodRef]:
    yield from schema.bytecode_methods
    yield from schema.native_methods
