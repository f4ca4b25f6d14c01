from __future__ import annotations

import re
from pathlib import Path

import pytest

from dyndebloat.runtime import Add, AppDefinition, Const, MethodDef, Ret
from dyndebloat.schema import DebloatSchema, MethodRef, StoreMode, open_store

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"
FIXTURE_LIBS = ("libarith.so", "libcodec.so", "libtiny.so")

PKG = "com.example.app"


def bc(name: str, cls: str = f"{PKG}.Main", desc: str = "()I64", package: str = PKG) -> MethodRef:
    return MethodRef.bytecode(package, cls, name, desc)


def const_method(ref: MethodRef, value: int) -> MethodDef:
    return MethodDef(ref, 1, (Const(0, value), Ret(0)))


def sum_method(ref: MethodRef) -> MethodDef:
    return MethodDef(ref, 3, (Const(0, 2), Const(1, 3), Add(2, 0, 1), Ret(2)))


@pytest.fixture
def store_path(tmp_path: Path) -> Path:
    return tmp_path / "schemas.json"


@pytest.fixture
def make_store(store_path: Path):
    """Write the given schemas to a fresh store, return a read-only handle."""

    def _make(*schemas: DebloatSchema):
        rw = open_store(store_path, StoreMode.READ_WRITE)
        for s in schemas:
            rw.put(s)
        return open_store(store_path, StoreMode.READ_ONLY)

    return _make


@pytest.fixture
def simple_app() -> AppDefinition:
    return AppDefinition(
        PKG,
        [sum_method(bc("sum")), const_method(bc("seven"), 7), const_method(bc("trim", cls="java.lang.String"), 1)],
    )


CRITERIA = {
    1: "interception completeness",
    2: "compilation exclusion",
    3: "counter freeze and entry-state pinning",
    4: "recovery and compiled-before-listing limitation",
    5: "native zero-fill byte-exactness",
    6: "gadget-scan oracle equivalence",
    7: "gadget reduction and classifier agreement",
    8: "DICI whitelist",
    9: "CVE-style reflective invocation",
    10: "capability soundness",
}
_CRITERION_TEST = re.compile(r"test_acceptance\.py::test_c(\d+)")


def pytest_terminal_summary(terminalreporter):
    outcome: dict[int, bool] = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = _CRITERION_TEST.search(getattr(rep, "nodeid", ""))
            if m is None or (status == "passed" and rep.when != "call"):
                continue
            n = int(m.group(1))
            outcome[n] = outcome.get(n, True) and status == "passed"
    if not outcome:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        verdict = "PASS" if outcome.get(n) else ("FAIL" if n in outcome else "NOT RUN")
        terminalreporter.write_line(f"criterion {n:2d} ({CRITERIA[n]}): {verdict}")
