import pytest

from twinscript import aslr
from twinscript.aslr import DEFAULT_CATALOGUE, build_master, build_twin
from twinscript.bytecode import FunctionCode, Instr, Op, compile_source
from twinscript.values import IntArrayRef, ObjectRef, canonical_decode, canonicalize
from twinscript.vm import (
    Continue,
    EventKind,
    HaltNow,
    Overwrite,
    ProtocolError,
    VmStatus,
    run_solo,
    vm_create,
)

from helpers import master_twin_solo, solo_events

MS = build_master(DEFAULT_CATALOGUE, 1)
TS = build_twin(MS, DEFAULT_CATALOGUE, 2)


def make_vm(source, space=MS, seed=1, **kwargs):
    return vm_create(compile_source(source), space, seed, **kwargs)


def run(source, space=MS, seed=1, **kwargs):
    vm = make_vm(source, space, seed, **kwargs)
    return run_solo(vm), vm


def events_sig(events):
    return [(e.kind, e.site, e.builtin, e.payload) for e in events]


# checkpoint sequencing


def test_print_event_sequence():
    events, vm = run("print(7);")
    assert [e.kind for e in events] == [
        EventKind.BUILTIN_ENTER,
        EventKind.OUTPUT,
        EventKind.FINISHED,
    ]
    assert events[0].payload == (canonicalize(7.0),)
    assert events[1].payload == (canonicalize(7.0),)
    assert vm.out == ["7"]


def test_convert_event_for_tonumber():
    events, _ = run('var x = toNumber("4");')
    conv = events[0]
    assert conv.kind is EventKind.CONVERT
    assert canonical_decode(conv.payload[0]) == 4.0


def test_seq_increases_by_one():
    events, _ = run('print(1); print(2); var x = toNumber("3");')
    assert [e.seq for e in events] == list(range(1, len(events) + 1))


def test_call_enter_exit_wrap_function_body():
    events, _ = run("fn f(x) { return x + 1; }\nvar y = f(4);")
    kinds = [e.kind for e in events]
    assert kinds == [EventKind.CALL_ENTER, EventKind.CALL_EXIT, EventKind.FINISHED]
    assert canonical_decode(events[0].payload[0]) == 4.0
    assert canonical_decode(events[1].payload[0]) == 5.0


def test_first_allocation_lands_at_heap_base():
    _, vm = run("var a = intArray(1);")
    assert vm.heap.log[0].addr == MS.heap_base


def test_identical_inputs_give_identical_first_100_events():
    src = "var i = 0;\nwhile (i < 40) { print(i); i = i + 1; }"
    e1, _ = run(src)
    e2, _ = run(src)
    assert events_sig(e1[:100]) == events_sig(e2[:100])


def test_heap_base_delta_shifts_allocation_log():
    src = "var a = intArray(3); var b = intArray(5); var o = { x: 1 };"
    s1 = build_master(DEFAULT_CATALOGUE, 11)
    s2 = build_master(DEFAULT_CATALOGUE, 12)
    _, vm1 = run(src, space=s1, seed=1)
    _, vm2 = run(src, space=s2, seed=1)
    delta = s2.heap_base - s1.heap_base
    log1 = [(a.addr, a.size, a.kind) for a in vm1.heap.log]
    log2 = [(a.addr, a.size, a.kind) for a in vm2.heap.log]
    assert [(a + delta, s, k) for a, s, k in log1] == log2


# directives


def test_overwrite_at_builtin_exit_changes_observed_value():
    vm = make_vm("var r = random(); print(r);")
    enter = vm.run_to_checkpoint()
    assert enter.kind is EventKind.BUILTIN_ENTER
    vm.apply_directive(Continue())
    exit_ = vm.run_to_checkpoint()
    assert exit_.kind is EventKind.BUILTIN_EXIT
    vm.apply_directive(Overwrite(canonicalize(0.5)))
    out_events = run_solo(vm)
    printed = canonical_decode(out_events[1].payload[0])
    assert printed == 0.5
    assert vm.out == ["0.5"]


def test_continue_advances_state():
    vm = make_vm("print(1);")
    ev = vm.run_to_checkpoint()
    vm.apply_directive(Continue())
    assert vm.run_to_checkpoint().kind is EventKind.OUTPUT


def test_overwrite_at_call_enter_is_protocol_error():
    vm = make_vm("fn f(x) { return x; }\nvar y = f(1);")
    ev = vm.run_to_checkpoint()
    assert ev.kind is EventKind.CALL_ENTER
    with pytest.raises(ProtocolError):
        vm.apply_directive(Overwrite(canonicalize(2.0)))


def test_overwrite_at_output_is_protocol_error():
    vm = make_vm("print(1);")
    vm.run_to_checkpoint()
    vm.apply_directive(Continue())
    ev = vm.run_to_checkpoint()
    assert ev.kind is EventKind.OUTPUT
    with pytest.raises(ProtocolError):
        vm.apply_directive(Overwrite(canonicalize(2.0)))


def test_haltnow_stops_the_vm():
    vm = make_vm("print(1); print(2);")
    vm.run_to_checkpoint()
    vm.apply_directive(HaltNow())
    assert vm.status is VmStatus.HALTED
    with pytest.raises(ProtocolError):
        vm.run_to_checkpoint()


def test_strict_alternation_enforced():
    vm = make_vm("print(1);")
    vm.run_to_checkpoint()
    with pytest.raises(ProtocolError):
        vm.run_to_checkpoint()
    vm.apply_directive(Continue())
    with pytest.raises(ProtocolError):
        vm.apply_directive(Continue())


# builtins


def test_len_of_string():
    _, vm = run('print(len("abc"));')
    assert vm.out == ["3"]


def test_int_array_zero_fill_layout():
    _, vm = run("var a = intArray(2);")
    base = vm.heap.log[0].addr
    assert vm.heap.load(base) == MS.module("engine").base + 0x10
    assert vm.heap.load(base + 4) == 2
    assert vm.heap.load(base + 8) == 0
    assert vm.heap.load(base + 12) == 0


def test_random_seeded_stream_replays():
    events1, vm1 = run("print(random()); print(random());", seed=1)
    events2, vm2 = run("print(random()); print(random());", seed=1)
    assert vm1.out == vm2.out
    assert vm1.out[0] != vm1.out[1]
    _, vm3 = run("print(random()); print(random());", seed=99)
    assert vm3.out != vm1.out


def test_now_is_nondecreasing_and_pid_is_config():
    _, vm = run("var a = now(); var b = now(); print(b >= a); print(pid());",
                proc_id=4242)
    assert vm.out == ["true", "4242"]


def test_fetch_reads_resources(tmp_path):
    (tmp_path / "page.txt").write_text("cached text")
    _, vm = run('print(fetch("page.txt"));', resources=tmp_path)
    assert vm.out == ["cached text"]


def test_fetch_rejects_traversal(tmp_path):
    events, _ = run('print(fetch("../secret"));', resources=tmp_path)
    assert events[-1].kind is EventKind.TRAP
    assert canonical_decode(events[-1].payload[0]) == "bad-resource"


def test_fetch_stub_without_resources():
    _, vm = run('print(len(fetch("page.txt")));', resources=None)
    assert vm.out == ["0"]


def test_pure_builtins():
    src = (
        "print(abs(-3)); print(floor(2.9)); print(parseInt(\"41x\"));"
        ' print(charAt("abc", 1)); print(substr("abcdef", 1, 3));'
    )
    _, vm = run(src)
    assert vm.out == ["3", "2", "41", "b", "bcd"]


def test_arity_trap_via_hand_built_call():
    # the compiler rejects bad arity, so force it at the bytecode level
    program = compile_source("print(1);")
    program.functions[0].code[1] = Instr(Op.CALL_BUILTIN, program.builtin_id("len"), 0, 1)
    vm = vm_create(program, MS, 1)
    events = run_solo(vm)
    assert events[-1].kind is EventKind.TRAP
    assert canonical_decode(events[-1].payload[0]) == "arity"


# traps


@pytest.mark.parametrize(
    "src,category",
    [
        ("var x = 1 / 0;", "div-zero"),
        ("var x = 1 % 0;", "div-zero"),
        ('var x = 1 + "a";', "type-error"),
        ("var a = [1]; var x = a[5];", "oob"),
        ("var a = [1]; var x = a[0.5];", "type-error"),
        ("var a = intArray(2); var x = a[2];", "oob"),
        ("var a = intArray(2); a[9] = 1;", "oob"),
        ("var o = { x: 1 }; var y = o[0];", "type-error"),
        ("var x = corruptAndRead(5);", "type-error"),
        ("var x = intArray(-1);", "alloc-size"),
    ],
)
def test_trap_categories(src, category):
    events, _ = run(src)
    assert events[-1].kind is EventKind.TRAP
    assert canonical_decode(events[-1].payload[0]) == category


def test_trap_is_a_synchronized_event_with_site():
    events, _ = run("var a = [1]; var x = a[5];")
    trap = events[-1]
    assert trap.seq == 1
    assert trap.site != 0


def test_missing_field_reads_null():
    _, vm = run("var o = { a: 1 }; print(o.b);")
    assert vm.out == ["null"]


# vulnerable surface


def test_fresh_int_array_reads_zero_in_bounds():
    _, vm = run("var a = intArray(4); print(a[2]);")
    assert vm.out == ["0"]


def test_oob_read_past_end_hits_next_header():
    src = "var a = intArray(4);\nvar b = intArray(4);\nsetLengthUnsafe(a, 64);\nprint(a[6]);"
    _, vm = run(src)
    assert vm.out == [str(MS.module("engine").base + 0x10)]


def test_oob_read_differs_between_master_and_twin_at_same_site():
    src = (
        "var a = intArray(4); var b = intArray(4);"
        " setLengthUnsafe(a, 64); var w = a[6]; print(w);"
    )
    me, te, mvm, tvm = master_twin_solo(src)
    m_conv = [e for e in me if e.kind is EventKind.CONVERT][0]
    t_conv = [e for e in te if e.kind is EventKind.CONVERT][0]
    assert m_conv.seq == t_conv.seq
    assert m_conv.site == t_conv.site
    assert m_conv.payload != t_conv.payload
    m_word = canonical_decode(m_conv.payload[0])
    t_word = canonical_decode(t_conv.payload[0])
    assert m_word == MS.module("engine").base + 0x10
    assert t_word == TS.module("engine").base + 0x10


def test_e1_stream_contains_builtin_exit_with_engine_word():
    src = (
        "var a = intArray(4); var b = intArray(4);"
        " setLengthUnsafe(a, 64); var w = floor(a[6]); print(w - 16);"
    )
    events, vm = run(src)
    exits = [
        e
        for e in events
        if e.kind is EventKind.BUILTIN_EXIT
        and vm.program.builtins[e.builtin] == "floor"
    ]
    assert canonical_decode(exits[0].payload[0]) == MS.module("engine").base + 0x10


def test_new_option_reads_stale_element_word():
    src = (
        "var a = intArray(4);\n"
        "a[2] = 2863289685;\n"  # 0xAAAA5555 planted two words into the data
        "discard(a);\n"
        "var o = newOption();\n"
        "print(o.index);\n"
    )
    _, vm = run(src)
    assert vm.out == ["2863289685"]


def test_new_option_on_pristine_heap_reads_zero():
    _, vm = run("var o = newOption(); print(o.index);")
    assert vm.out == ["0"]


def test_new_option_over_former_header_reads_vtable():
    src = (
        "var pad = intArray(2);\n"
        "var vic = intArray(2);\n"
        "discard(vic);\n"
        "discard(pad);\n"
        "var o = newOption();\n"
        "print(o.index);\n"
    )
    _, vm = run(src)
    assert vm.out == [str(MS.module("engine").base + 0x10)]


def test_corrupt_and_read_returns_tagged_vtable():
    _, vm = run("var o = { k: 1 }; print(corruptAndRead(o));")
    assert vm.out == [str(MS.module("engine").base + 0x20)]


def test_same_type_objects_share_a_vtable():
    _, vm = run(
        "var a = { x: 1 }; var b = { y: 2 };"
        " print(corruptAndRead(a) == corruptAndRead(b));"
    )
    assert vm.out == ["true"]


def test_vtable_delta_equals_engine_base_delta():
    src = "var o = { k: 1 }; print(corruptAndRead(o));"
    _, mvm = run(src, space=MS, seed=1)
    _, tvm = run(src, space=TS, seed=2)
    m = int(mvm.out[0])
    t = int(tvm.out[0])
    assert m - t == MS.module("engine").base - TS.module("engine").base


def test_unmapped_oob_read_traps():
    src = (
        "var a = intArray(2); setLengthUnsafe(a, 4000000000);"
        " var x = a[999999999];"
    )
    events, _ = run(src)
    assert events[-1].kind is EventKind.TRAP
    assert canonical_decode(events[-1].payload[0]) == "unmapped-read"


def test_read_index_builtin_matches_index_opcode():
    src = (
        "var a = intArray(4); var b = intArray(4); setLengthUnsafe(a, 64);"
        " print(readIndex(a, 6) == a[6]);"
    )
    _, vm = run(src)
    assert vm.out == ["true"]


def test_discard_of_plain_array_is_a_type_error():
    events, _ = run("var a = [1]; discard(a);")
    assert canonical_decode(events[-1].payload[0]) == "type-error"


def test_double_discard_traps():
    events, _ = run("var a = intArray(1); discard(a); discard(a);")
    assert canonical_decode(events[-1].payload[0]) == "use-after-free"


# unused-by-the-compiler opcodes still execute

def test_new_int_array_and_output_opcodes():
    fn = FunctionCode(
        name="<main>",
        param_count=0,
        local_count=1,
        code=[
            Instr(Op.LOAD_CONST, 0),
            Instr(Op.NEW_INT_ARRAY),
            Instr(Op.STORE_LOCAL, 0),
            Instr(Op.LOAD_LOCAL, 0),
            Instr(Op.OUTPUT, site=1),
            Instr(Op.HALT),
        ],
    )
    program = compile_source("print(1);")  # borrow consts/builtins shape
    program.functions[0] = fn
    program.consts[:] = [3.0]
    program.sites[1] = (1, 1)
    vm = vm_create(program, MS, 1)
    events = run_solo(vm)
    assert [e.kind for e in events] == [EventKind.OUTPUT, EventKind.FINISHED]
    assert vm.out == ["int-array[0, 0, 0]"]


# canonical payload properties


def test_int_array_canonical_sees_current_words():
    src = "var a = intArray(2); a[0] = 7; print(a);"
    events, _ = run(src)
    out = [e for e in events if e.kind is EventKind.OUTPUT][0]
    decoded = canonical_decode(out.payload[0])
    assert decoded.words == (7, 0)


def test_funcref_payload_equal_across_processes():
    src = "fn probe() { return 1; }\nprint(probe);"
    me, te, _, _ = master_twin_solo(src)
    m_out = [e for e in me if e.kind is EventKind.OUTPUT][0]
    t_out = [e for e in te if e.kind is EventKind.OUTPUT][0]
    assert m_out.payload == t_out.payload


def test_leaked_word_moves_canonical_bytes_only_at_that_word():
    src = (
        "var a = intArray(4); var b = intArray(4); setLengthUnsafe(a, 8);"
        " a[1] = 5; var keep = intArray(2); keep[0] = a[6]; print(keep);"
    )
    me, te, _, _ = master_twin_solo(src)
    m_out = [e for e in me if e.kind is EventKind.OUTPUT][0]
    t_out = [e for e in te if e.kind is EventKind.OUTPUT][0]
    from twinscript.values import first_divergence

    got = first_divergence(m_out.payload[0], t_out.payload[0])
    assert got is not None
    offset, leaf_m, leaf_t = got
    assert leaf_m != leaf_t
    # word 0 of a two-word int array: tag(1) + count(4) gives offset 5..9
    assert 5 <= offset < 9
