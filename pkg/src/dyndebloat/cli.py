"""Command-line entry point.

Exit codes: 0 success, 2 usage/format/capability/symbol errors, 3 I/O
errors, 4 the simulated app aborted mid-trace.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import warnings
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .elf import ElfImage, hexdump, load_library, locate_function, read_elf, read_region
from .errors import (
    CapabilityError,
    ElfError,
    FormatError,
    GadgetScanError,
    IoError,
    SmallFunctionWarning,
)
from .gadgets import compare_reports, scan_library
from .runtime import (
    DEFAULT_JIT_THRESHOLD,
    load_app,
    load_appdef,
    trace_from_doc,
)
from .schema import (
    StoreMode,
    method_to_doc,
    open_store,
    parse_method,
    parse_method_spec,
    parse_schema,
    schema_to_doc,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ABORT = 4


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not a positive integer")
    return value


def _emit(args: argparse.Namespace, doc: Any, text: str | None = None) -> None:
    if args.output == "text" and text is not None:
        print(text)
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))


def _read_json(path: str) -> Any:
    try:
        raw = sys.stdin.read() if path == "-" else Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None


def _atomic_write(path: Path, data: bytes) -> None:
    try:
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _require_store(args: argparse.Namespace) -> str:
    if not args.store:
        raise FormatError("--store is required")
    return args.store


# schema


def cmd_schema(args: argparse.Namespace) -> int:
    action = args.action
    if action == "set":
        store = open_store(_require_store(args), StoreMode.READ_WRITE)
        try:
            text = sys.stdin.read() if args.file == "-" else Path(args.file).read_text(encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot read {args.file}: {exc}") from exc
        schema = parse_schema(text)
        store.put(schema)
        _emit(args, schema_to_doc(schema), f"stored schema for {schema.package}")
    elif action == "get":
        schema = open_store(_require_store(args), StoreMode.READ_ONLY).get(args.package)
        doc = schema_to_doc(schema) if schema else None
        _emit(args, doc, "no schema" if schema is None else _schema_summary(doc))
    elif action == "remove-method":
        store = open_store(_require_store(args), StoreMode.READ_WRITE)
        ref = parse_method_spec(args.package, args.method)
        store.remove_method(args.package, ref)
        schema = store.get(args.package)
        doc = schema_to_doc(schema) if schema else None
        _emit(args, doc, "no schema" if schema is None else _schema_summary(doc))
    else:
        packages = open_store(_require_store(args), StoreMode.READ_ONLY).packages()
        _emit(args, packages, "\n".join(packages))
    return EXIT_OK


def _schema_summary(doc: dict[str, Any]) -> str:
    return (
        f"{doc['package']}: {len(doc['bytecode_methods'])} bytecode, "
        f"{len(doc['native_methods'])} native, {len(doc['whitelist'])} whitelisted"
    )


# runtime


def _launch(args: argparse.Namespace, state: dict[str, Any] | None):
    appdef = load_appdef(args.appdef)
    store = open_store(args.store, StoreMode.READ_ONLY) if args.store else None
    carry = None
    if state is not None:
        try:
            carry = {parse_method(d) for d in state["odex"]}
        except (KeyError, TypeError) as exc:
            raise FormatError(f"corrupt state: {exc!r}") from None
    return load_app(
        appdef,
        store,
        args.jit_threshold,
        carry,
        graceful_termination=False if args.no_graceful_termination else None,
    )


def _load_state(path: str | None, required: bool) -> dict[str, Any] | None:
    if path is None:
        if required:
            raise FormatError("--state is required")
        return None
    p = Path(path)
    if not p.exists():
        if required:
            raise FormatError(f"state file {p} does not exist")
        return None
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise FormatError("state must be a JSON object")
    return doc


def cmd_run(args: argparse.Namespace) -> int:
    prior = _load_state(args.state, required=False)
    vm = _launch(args, prior)
    trace = trace_from_doc(_read_json(args.trace))
    report = vm.run_trace(trace)
    if args.state:
        _atomic_write(Path(args.state), (json.dumps(vm.state_doc(), indent=2, sort_keys=True) + "\n").encode())
    doc = report.to_doc()
    text = (
        f"invoked {len(report.invoked)} methods, debloated {len(report.debloated)}, "
        f"{len(report.events)} events" + (f"; aborted: {report.error}" if report.error else "")
    )
    _emit(args, doc, text)
    return EXIT_ABORT if report.aborted else EXIT_OK


def cmd_aot(args: argparse.Namespace) -> int:
    state = _load_state(args.state, required=True)
    vm = _launch(args, state)
    vm.restore_state(state)
    odex = vm.aot_compile()
    _atomic_write(Path(args.state), (json.dumps(vm.state_doc(), indent=2, sort_keys=True) + "\n").encode())
    refs = sorted(odex, key=lambda r: r._key())
    _emit(args, [method_to_doc(r) for r in refs], "\n".join(str(r) for r in refs))
    return EXIT_OK


def cmd_clear_data(args: argparse.Namespace) -> int:
    state = _load_state(args.state, required=True)
    try:
        state["odex"] = []
        for m in state["methods"]:
            m["in_profile"] = False
            if m["entry_state"] == "AotCompiled":
                m["entry_state"] = "Interpreter"
    except (KeyError, TypeError) as exc:
        raise FormatError(f"corrupt state: {exc!r}") from None
    _atomic_write(Path(args.state), (json.dumps(state, indent=2, sort_keys=True) + "\n").encode())
    _emit(args, {"cleared": True}, "app data cleared")
    return EXIT_OK


# ELF


def _read_lib(path: str) -> ElfImage:
    try:
        return read_elf(path)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def cmd_debloat_elf(args: argparse.Namespace) -> int:
    image = _read_lib(args.lib)
    lib = load_library(image, args.symbols)
    spans = []
    dumps = []
    for name in sorted(lib.debloated):
        span = lib.spans[name]
        addr = lib.address_of(span.vaddr)
        spans.append({"symbol": name, "vaddr": span.vaddr, "size": span.size, "address": addr})
        dumps.append(f"{name} @ {addr:#x} ({span.size} bytes)\n{hexdump(read_region(lib, addr, span.size))}")
    manifest = {
        "library": lib.name,
        "base": lib.base,
        "mapped_start": lib.start,
        "mapped_size": len(lib.memory),
        "debloated": spans,
    }
    out = Path(args.out)
    _atomic_write(out, bytes(lib.memory))
    _atomic_write(out.with_name(out.name + ".manifest.json"), (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    if args.output == "json":
        print(json.dumps({**manifest, "dumps": {s["symbol"]: hexdump(read_region(lib, s["address"], s["size"])) for s in spans}}, indent=2, sort_keys=True))
    else:
        print("\n".join(dumps))
    return EXIT_OK


def _functions(image: ElfImage, args: argparse.Namespace) -> list:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmallFunctionWarning)
        if args.all:
            names = []
            seen = set()
            for sym in image.exported_functions():
                if (sym.value, sym.size) not in seen and sym.name not in names:
                    seen.add((sym.value, sym.size))
                    names.append(sym.name)
        else:
            names = [n for n in args.functions.split(",") if n]
        return [locate_function(image, n) for n in names]


def cmd_gadgets(args: argparse.Namespace) -> int:
    image = _read_lib(args.lib)
    spans = _functions(image, args)
    plain = load_library(image)
    before = scan_library(plain, spans, args.max_depth)
    if args.before_after is None:
        doc = before.to_doc()
        _emit(args, doc, f"{len(before)} unique gadgets in {len(spans)} spans")
        return EXIT_OK
    schedule = [n for n in args.before_after.split(",") if n] or [s.symbol for s in spans]
    after = scan_library(load_library(image, schedule), spans, args.max_depth)
    summary = compare_reports(before, after)
    doc = {"before": before.to_doc(), "after": after.to_doc(), "summary": summary.to_doc()}
    _emit(args, doc, f"{len(before)} -> {len(after)} unique gadgets, removed {summary.removed}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--store", help="schema store file")
    common.add_argument("--jit-threshold", type=_positive, default=DEFAULT_JIT_THRESHOLD)
    common.add_argument("--max-depth", type=_positive, default=10)
    common.add_argument("--no-graceful-termination", action="store_true")
    common.add_argument("--output", choices=("json", "text"), default="json")
    common.add_argument("--state", help="persisted instance state (counters, tiers, odex)")

    parser = argparse.ArgumentParser(prog="dyndebloat", description="Runtime debloating simulator, ELF function eraser and ROP gadget scanner.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schema", help="manage the schema store")
    ssub = p.add_subparsers(dest="action", required=True)
    s = ssub.add_parser("set", parents=[common])
    s.add_argument("file", help="schema document, or - for stdin")
    s = ssub.add_parser("get", parents=[common])
    s.add_argument("package")
    s = ssub.add_parser("remove-method", parents=[common])
    s.add_argument("package")
    s.add_argument("method", help="Class.method(desc), lib.so!symbol, or a JSON method document")
    ssub.add_parser("list", parents=[common])
    p.set_defaults(func=cmd_schema)

    p = sub.add_parser("run", help="run a trace against an app definition", parents=[common])
    p.add_argument("appdef")
    p.add_argument("trace")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("aot", help="AOT-compile profiled methods of a persisted instance", parents=[common])
    p.add_argument("appdef")
    p.set_defaults(func=cmd_aot)

    p = sub.add_parser("clear-data", help="drop odex and profile from a persisted instance", parents=[common])
    p.set_defaults(func=cmd_clear_data)

    p = sub.add_parser("debloat-elf", help="load a library with functions erased", parents=[common])
    p.add_argument("lib")
    p.add_argument("symbols", nargs="*")
    p.add_argument("-o", "--out", required=True, help="memory image output path")
    p.set_defaults(func=cmd_debloat_elf)

    p = sub.add_parser("gadgets", help="scan function spans for ROP gadgets", parents=[common])
    p.add_argument("lib")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--functions", help="comma-separated symbol names")
    which.add_argument("--all", action="store_true", help="every exported function")
    p.add_argument(
        "--before-after",
        nargs="?",
        const="",
        metavar="SYMBOLS",
        help="also scan after erasing SYMBOLS (default: the scanned functions)",
    )
    p.set_defaults(func=cmd_gadgets)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FormatError, CapabilityError, ElfError, GadgetScanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
