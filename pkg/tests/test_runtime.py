from __future__ import annotations

import json

import pytest

from dyndebloat.errors import CapabilityError, ExecutionError, FormatError, UnknownMethod
from dyndebloat.runtime import (
    Add,
    AppDefinition,
    Call,
    CallNative,
    Const,
    Echo,
    EntryState,
    EventKind,
    MethodDef,
    Ret,
    RetVoid,
    ReturnConst,
    TraceEntry,
    aot_compile,
    appdef_from_doc,
    appdef_to_doc,
    clear_app_data,
    invoke,
    load_app,
    relaunch,
    run_trace,
    trace_from_doc,
    trace_to_doc,
    wrap_i64,
)
from dyndebloat.schema import DebloatSchema, MethodRef, StoreMode, open_store

from .conftest import FIXTURES, PKG, bc, const_method, sum_method


def kinds(events):
    return [e.kind for e in events]


def count(events, kind):
    return sum(1 for e in events if e.kind is kind)


class TestLoad:
    def test_two_methods_empty_store(self, make_store):
        app = AppDefinition(PKG, [sum_method(bc("a")), const_method(bc("b"), 1)])
        vm = load_app(app, make_store())
        assert len(vm.methods) == 2
        for rec in vm.methods.values():
            assert rec.entry_state is EntryState.INTERPRETER and rec.counter == 0 and not rec.in_profile
        assert vm.schema_snapshot == DebloatSchema(PKG)

    def test_carryover_loads_aot(self, make_store):
        m = bc("sum")
        app = AppDefinition(PKG, [sum_method(m)])
        vm = load_app(app, make_store(DebloatSchema(PKG, [m])), odex_carryover={m})
        assert vm.methods[m].entry_state is EntryState.AOT_COMPILED
        assert vm.odex == {m}
        assert m not in vm.effective_schema()

    def test_platform_entry_ignored(self, make_store, simple_app):
        trim = bc("trim", cls="java.lang.String")
        vm = load_app(simple_app, make_store(DebloatSchema(PKG, [trim])))
        assert vm.invoke(PKG, trim) == 1
        assert trim not in vm.effective_schema()
        assert count(vm.event_log, EventKind.GRACEFUL_TERMINATION) == 0

    @pytest.mark.parametrize("prefix", ["java.", "javax.", "android.", "com.google."])
    def test_all_platform_prefixes(self, prefix):
        ref = bc("m", cls=f"{prefix}Thing")
        vm = load_app(AppDefinition(PKG, [const_method(ref, 3)]), DebloatSchema(PKG, [ref]))
        assert vm.invoke(PKG, ref) == 3

    def test_custom_platform_prefixes(self):
        ref = bc("m", cls="kotlin.Thing")
        app = AppDefinition(PKG, [const_method(ref, 3)])
        assert load_app(app, DebloatSchema(PKG, [ref])).invoke(PKG, ref) is None
        assert load_app(app, DebloatSchema(PKG, [ref]), platform_prefixes=("kotlin.",)).invoke(PKG, ref) == 3

    def test_rejects_read_write_handle(self, store_path, simple_app):
        rw = open_store(store_path, StoreMode.READ_WRITE)
        with pytest.raises(CapabilityError):
            load_app(simple_app, rw)

    def test_duplicate_methods_rejected(self):
        with pytest.raises(FormatError):
            AppDefinition(PKG, [sum_method(bc("a")), sum_method(bc("a"))])

    def test_foreign_method_rejected(self):
        with pytest.raises(FormatError):
            AppDefinition(PKG, [sum_method(bc("a", package="com.other", cls="com.other.X"))])


class TestInvoke:
    def test_sum(self, simple_app):
        vm = load_app(simple_app, None)
        assert invoke(vm, PKG, bc("sum")) == 5
        assert vm.methods[bc("sum")].counter == 1

    def test_sum_in_schema(self, simple_app):
        m = bc("sum")
        vm = load_app(simple_app, DebloatSchema(PKG, [m]))
        assert vm.invoke(PKG, m) is None
        assert vm.methods[m].counter == 0
        assert kinds(vm.event_log) == [EventKind.GRACEFUL_TERMINATION]
        assert vm.event_log[0].method == m

    def test_null_distinct_from_zero(self):
        z = bc("zero")
        vm = load_app(AppDefinition(PKG, [const_method(z, 0)]), None)
        assert vm.invoke(PKG, z) == 0 and vm.invoke(PKG, z) is not None

    def test_fifteen_invocations_hand_table(self):
        """Each row: (result, counter, entry_state, graceful events so far, jit events so far)."""
        m = bc("sum")
        vm = load_app(AppDefinition(PKG, [sum_method(m)]), DebloatSchema(PKG, [m]), jit_threshold=10)
        table = [(None, 0, EntryState.INTERPRETER, step, 0) for step in range(1, 16)]
        for expected in table:
            result = vm.invoke(PKG, m)
            rec = vm.methods[m]
            row = (
                result,
                rec.counter,
                rec.entry_state,
                count(vm.event_log, EventKind.GRACEFUL_TERMINATION),
                count(vm.event_log, EventKind.JIT_COMPILE),
            )
            assert row == expected

    def test_jit_promotion_hand_table(self):
        m = bc("sum")
        vm = load_app(AppDefinition(PKG, [sum_method(m)]), None, jit_threshold=3)
        rows = []
        for _ in range(5):
            r = vm.invoke(PKG, m)
            rec = vm.methods[m]
            rows.append((r, rec.counter, rec.entry_state.value, rec.in_profile))
        assert rows == [
            (5, 1, "Interpreter", True),
            (5, 2, "Interpreter", True),
            (5, 3, "JitCompiled", True),
            (5, 3, "JitCompiled", True),
            (5, 3, "JitCompiled", True),
        ]
        assert count(vm.event_log, EventKind.JIT_COMPILE) == 1

    def test_whitelist(self):
        m = bc("secret")
        vm = load_app(AppDefinition(PKG, [const_method(m, 42)]), DebloatSchema(PKG, whitelist=[(m, "com.v")]))
        assert vm.invoke("com.v", m) == 42
        assert vm.invoke("com.x", m) is None
        assert kinds(vm.event_log) == [EventKind.WHITELIST_BLOCKED, EventKind.GRACEFUL_TERMINATION]
        assert vm.event_log[0].caller_package == "com.x"
        assert vm.methods[m].counter == 1

    def test_whitelist_precedes_debloat(self):
        m = bc("secret")
        vm = load_app(AppDefinition(PKG, [const_method(m, 42)]), DebloatSchema(PKG, [m], whitelist=[(m, "com.v")]))
        assert vm.invoke("com.x", m) is None
        assert vm.event_log[0].kind is EventKind.WHITELIST_BLOCKED
        # the victim passes the whitelist and then hits the debloat check
        assert vm.invoke("com.v", m) is None
        assert vm.event_log[-1].kind is EventKind.GRACEFUL_TERMINATION
        assert m in vm.intercepted

    def test_multiple_victims(self):
        m = bc("secret")
        vm = load_app(AppDefinition(PKG, [const_method(m, 1)]), DebloatSchema(PKG, whitelist=[(m, "com.v"), (m, "com.w")]))
        assert vm.invoke("com.v", m) == 1 and vm.invoke("com.w", m) == 1 and vm.invoke("com.x", m) is None

    def test_graceful_termination_disabled(self, simple_app):
        m = bc("sum")
        vm = load_app(simple_app, DebloatSchema(PKG, [m], graceful_termination=False))
        assert vm.invoke(PKG, m) is None
        assert vm.event_log == []
        vm = load_app(simple_app, DebloatSchema(PKG, [m]), graceful_termination=False)
        vm.invoke(PKG, m)
        assert vm.event_log == []

    def test_nested_call_to_debloated(self):
        inner, outer = bc("inner"), bc("outer")
        app = AppDefinition(
            PKG,
            [const_method(inner, 9), MethodDef(outer, 2, (Call(0, inner, ()), Ret(0)))],
        )
        vm = load_app(app, DebloatSchema(PKG, [inner]))
        assert vm.invoke(PKG, outer) is None
        report = vm.run_trace([TraceEntry(PKG, outer)])
        assert report.invoked == {inner, outer} and report.debloated == {inner}

    def test_add_on_null_faults(self):
        inner, outer = bc("inner"), bc("outer")
        app = AppDefinition(
            PKG,
            [const_method(inner, 9), MethodDef(outer, 2, (Call(0, inner, ()), Const(1, 1), Add(0, 0, 1), Ret(0)))],
        )
        assert load_app(app, None).invoke(PKG, outer) == 10
        with pytest.raises(ExecutionError):
            load_app(app, DebloatSchema(PKG, [inner])).invoke(PKG, outer)

    def test_arguments_and_wraparound(self):
        m = bc("add", desc="(I64,I64)I64")
        vm = load_app(AppDefinition(PKG, [MethodDef(m, 2, (Add(0, 0, 1), Ret(0)))]), None)
        assert vm.invoke(PKG, m, [2, 40]) == 42
        assert vm.invoke(PKG, m, [(1 << 63) - 1, 1]) == -(1 << 63)
        assert wrap_i64(1 << 64) == 0
        with pytest.raises(ExecutionError):
            vm.invoke(PKG, m, [1])

    def test_register_fault(self):
        m = bc("bad")
        vm = load_app(AppDefinition(PKG, [MethodDef(m, 1, (Const(3, 1), Ret(3)))]), None)
        with pytest.raises(ExecutionError):
            vm.invoke(PKG, m)

    def test_retvoid_and_fall_through(self):
        a, b = bc("a", desc="()V?"), bc("b", desc="()V?")
        vm = load_app(AppDefinition(PKG, [MethodDef(a, 0, (RetVoid(),)), MethodDef(b, 1, (Const(0, 1),))]), None)
        assert vm.invoke(PKG, a) is None and vm.invoke(PKG, b) is None

    def test_unbounded_recursion_faults(self):
        m = bc("loop")
        vm = load_app(AppDefinition(PKG, [MethodDef(m, 1, (Call(0, m, ()), Ret(0)))]), None)
        with pytest.raises(ExecutionError):
            vm.invoke(PKG, m)

    def test_unknown_method(self, simple_app):
        vm = load_app(simple_app, None)
        with pytest.raises(UnknownMethod):
            vm.invoke(PKG, bc("missing"))
        with pytest.raises(UnknownMethod):
            vm.invoke(PKG, MethodRef.native(PKG, "libnone.so", "f"))

    def test_native_behaviors_without_library(self):
        caller = bc("c", desc="(I64)I64")
        app = AppDefinition(
            PKG,
            [MethodDef(caller, 2, (CallNative(1, "libx.so", "echo", (0,)), Ret(1)))],
            {("libx.so", "echo"): Echo(0), ("libx.so", "k"): ReturnConst(-3)},
        )
        vm = load_app(app, None)
        assert vm.invoke(PKG, caller, [11]) == 11
        assert vm.invoke(PKG, MethodRef.native(PKG, "libx.so", "k")) == -3
        assert count(vm.event_log, EventKind.NATIVE_RESOLVED) == 2
        with pytest.raises(ExecutionError):
            vm.invoke(PKG, MethodRef.native(PKG, "libx.so", "echo"), [])


class TestTrace:
    def test_empty(self, simple_app):
        report = run_trace(load_app(simple_app, None), [])
        assert report.invoked == set() and report.debloated == set() and report.results == [] and report.events == []
        assert not report.aborted

    def test_three_of_five(self):
        ms = [bc(f"m{i}") for i in range(5)]
        app = AppDefinition(PKG, [const_method(m, i) for i, m in enumerate(ms)] + [const_method(bc("free"), 9)])
        vm = load_app(app, DebloatSchema(PKG, ms))
        report = vm.run_trace([TraceEntry(PKG, ms[0]), TraceEntry(PKG, bc("free")), TraceEntry(PKG, ms[2]), TraceEntry(PKG, ms[4]), TraceEntry(PKG, ms[2])])
        assert report.debloated == {ms[0], ms[2], ms[4]}
        assert report.results == [None, 9, None, None, None]

    def test_abort_keeps_progress(self, simple_app):
        vm = load_app(simple_app, None)
        report = vm.run_trace([TraceEntry(PKG, bc("sum")), TraceEntry(PKG, bc("nope")), TraceEntry(PKG, bc("sum"))])
        assert report.aborted and "UnknownMethod" in report.error
        assert report.results == [5]

    def test_report_json(self, simple_app):
        vm = load_app(simple_app, DebloatSchema(PKG, [bc("seven")]))
        doc = vm.run_trace([TraceEntry(PKG, bc("seven")), TraceEntry(PKG, bc("sum"))]).to_doc()
        doc = json.loads(json.dumps(doc))
        assert doc["results"] == [None, 5]
        assert [d["method_name"] for d in doc["debloated"]] == ["seven"]
        assert doc["events"][0]["kind"] == "GracefulTermination"
        assert doc["aborted"] is None

    def test_snapshot_isolation(self, store_path, simple_app):
        m = bc("sum")
        rw = open_store(store_path, "rw")
        rw.put(DebloatSchema(PKG))
        vm = load_app(simple_app, open_store(store_path, "ro"))
        rw.put(DebloatSchema(PKG, [m]))
        assert vm.invoke(PKG, m) == 5
        vm2 = load_app(simple_app, open_store(store_path, "ro"))
        assert vm2.invoke(PKG, m) is None


class TestAot:
    def test_no_invocations(self, simple_app):
        vm = load_app(simple_app, None)
        assert aot_compile(vm) == set()

    def test_invoked_once(self, simple_app):
        vm = load_app(simple_app, None)
        vm.invoke(PKG, bc("seven"))
        assert aot_compile(vm) == {bc("seven")}
        assert vm.methods[bc("seven")].entry_state is EntryState.AOT_COMPILED
        assert count(vm.event_log, EventKind.AOT_COMPILE) == 1
        assert aot_compile(vm) == {bc("seven")}
        assert count(vm.event_log, EventKind.AOT_COMPILE) == 1

    def test_schema_method_fifty_times(self, simple_app):
        m = bc("sum")
        vm = load_app(simple_app, DebloatSchema(PKG, [m]))
        for _ in range(50):
            vm.invoke(PKG, m)
        assert m not in aot_compile(vm)

    def test_jit_then_aot(self, simple_app):
        m = bc("sum")
        vm = load_app(simple_app, None, jit_threshold=2)
        for _ in range(3):
            vm.invoke(PKG, m)
        assert vm.methods[m].entry_state is EntryState.JIT_COMPILED
        aot_compile(vm)
        assert vm.methods[m].entry_state is EntryState.AOT_COMPILED


class TestRelaunch:
    def test_recovery(self, store_path, simple_app):
        m = bc("sum")
        rw = open_store(store_path, "rw")
        rw.put(DebloatSchema(PKG, [m]))
        vm = load_app(simple_app, open_store(store_path, "ro"))
        assert vm.invoke(PKG, m) is None
        rw.remove_method(PKG, m)
        vm2 = relaunch(simple_app, open_store(store_path, "ro"), vm)
        assert vm2.invoke(PKG, m) == 5

    def test_compiled_before_listing_two_run_replay(self, store_path, simple_app):
        """Run 1: m interpreted twice then AOT-compiled.  Run 2: m listed but already compiled.

        Hand trace: run 1 results [5, 5], odex {m}; run 2 loads m as AotCompiled, so dispatch
        branch 3 runs it: results [5, 5, 5], counter stays 0, no interception events.
        """
        m = bc("sum")
        rw = open_store(store_path, "rw")
        rw.put(DebloatSchema(PKG))
        vm1 = load_app(simple_app, open_store(store_path, "ro"))
        assert [vm1.invoke(PKG, m) for _ in range(2)] == [5, 5]
        assert aot_compile(vm1) == {m}
        rw.put(DebloatSchema(PKG, [m]))
        vm2 = relaunch(simple_app, open_store(store_path, "ro"), vm1)
        assert vm2.methods[m].entry_state is EntryState.AOT_COMPILED
        assert [vm2.invoke(PKG, m) for _ in range(3)] == [5, 5, 5]
        assert vm2.methods[m].counter == 0
        assert count(vm2.event_log, EventKind.GRACEFUL_TERMINATION) == 0

    def test_jit_code_does_not_survive_relaunch(self, simple_app):
        m = bc("sum")
        vm1 = load_app(simple_app, None, jit_threshold=2)
        for _ in range(3):
            vm1.invoke(PKG, m)
        vm2 = relaunch(simple_app, DebloatSchema(PKG, [m]), vm1)
        assert vm2.methods[m].entry_state is EntryState.INTERPRETER
        assert vm2.invoke(PKG, m) is None

    def test_clear_on_fresh_instance(self, simple_app):
        vm = load_app(simple_app, None)
        clear_app_data(vm)
        assert vm.odex == set()

    def test_compile_clear_relaunch(self, simple_app):
        m = bc("sum")
        vm = load_app(simple_app, None)
        vm.invoke(PKG, m)
        aot_compile(vm)
        clear_app_data(vm)
        vm2 = relaunch(simple_app, None, vm)
        assert vm2.methods[m].entry_state is EntryState.INTERPRETER
        vm3 = relaunch(simple_app, DebloatSchema(PKG, [m]), vm)
        assert vm3.invoke(PKG, m) is None

    def test_odex_persists_but_profile_resets(self, simple_app):
        m = bc("seven")
        vm = load_app(simple_app, None)
        vm.invoke(PKG, m)
        aot_compile(vm)
        vm2 = relaunch(simple_app, None, vm)
        assert vm2.odex == {m}
        assert not any(r.in_profile for r in vm2.methods.values())


class TestDocuments:
    def test_appdef_round_trip(self, tmp_path):
        callee = bc("c", desc="(I64)I64")
        doc = {
            "package": PKG,
            "methods": [
                {
                    "ref": {"package": PKG, "kind": "bytecode", "class_name": f"{PKG}.Main", "method_name": "c", "descriptor": "(I64)I64", "library": ""},
                    "registers": 3,
                    "body": [["const", 1, 2], ["add", 2, 0, 1], ["callnative", 0, "lib.so", "sym", [2]], ["ret", 0]],
                },
                {
                    "ref": {"package": PKG, "kind": "bytecode", "class_name": f"{PKG}.Main", "method_name": "d", "descriptor": "()V?", "library": ""},
                    "registers": 1,
                    "body": [["call", 0, {"package": PKG, "kind": "bytecode", "class_name": f"{PKG}.Main", "method_name": "c", "descriptor": "(I64)I64", "library": ""}, []], ["retvoid"]],
                },
            ],
            "native_behaviors": [{"library": "lib.so", "symbol": "sym", "behavior": ["echo", 0]}],
            "libraries": [],
        }
        app = appdef_from_doc(doc)
        assert app.methods[0].ref == callee
        assert appdef_to_doc(app) == doc
        assert load_app(app, None).invoke(PKG, callee, [5]) == 7

    @pytest.mark.parametrize(
        "body",
        [[["jmp", 0]], [["const", 0]], [["const", "a", 1]], [["const", 0, 1 << 63]], [[]], ["ret"]],
    )
    def test_bad_instruction(self, body):
        doc = {
            "package": PKG,
            "methods": [{"ref": {"package": PKG, "kind": "bytecode", "class_name": "C", "method_name": "m", "descriptor": "()I64", "library": ""}, "registers": 1, "body": body}],
        }
        with pytest.raises(FormatError):
            appdef_from_doc(doc)

    def test_trace_round_trip(self):
        trace = [TraceEntry(PKG, bc("sum")), TraceEntry("com.x", bc("a", desc="(I64,V?)I64"), (1, None))]
        assert trace_from_doc(json.loads(json.dumps(trace_to_doc(trace)))) == trace
        with pytest.raises(FormatError):
            trace_from_doc({"not": "a list"})
        with pytest.raises(FormatError):
            trace_from_doc([{"caller_package": PKG}])

    def test_state_round_trip(self, simple_app):
        vm = load_app(simple_app, None, jit_threshold=2)
        for _ in range(3):
            vm.invoke(PKG, bc("sum"))
        vm.invoke(PKG, bc("seven"))
        doc = json.loads(json.dumps(vm.state_doc()))
        fresh = load_app(simple_app, None, jit_threshold=2)
        fresh.restore_state(doc)
        assert fresh.state_doc() == vm.state_doc()
        with pytest.raises(FormatError):
            fresh.restore_state({"package": PKG})
        with pytest.raises(FormatError):
            fresh.restore_state({**doc, "package": "com.other"})


def test_alias_of_erased_native_is_intercepted():
    from dyndebloat.runtime import ReturnConst

    crc = MethodRef.native(PKG, "libtiny.so", "crc_step")
    alias = MethodRef.native(PKG, "libtiny.so", "crc_step_alias")
    app = AppDefinition(
        PKG,
        [],
        {("libtiny.so", "crc_step"): ReturnConst(1), ("libtiny.so", "crc_step_alias"): ReturnConst(2)},
        [FIXTURES / "libtiny.so"],
    )
    vm = load_app(app, DebloatSchema(PKG, [], [crc]))
    assert vm.effective_schema() == {crc, alias}
    assert vm.invoke(PKG, alias) is None
    assert vm.invoke(PKG, crc) is None
    plain = load_app(app, None)
    assert plain.invoke(PKG, alias) == 2
