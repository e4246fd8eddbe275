"""Bytecode interpreter with checkpoint hooks.

The interpreter pauses at every point where a value is about to cross
into the script context (function entry/exit, builtin entry/exit, native
to script conversions, output) and emits a checkpoint event describing
the crossing value in canonical bytes. Execution resumes only after a
directive: Continue keeps the computed value, Overwrite substitutes it
(legal at BuiltinExit and Convert only, the entropy normalization path),
HaltNow stops the machine.

Reads of raw heap words surface as Convert events because a 32-bit word
becoming a script Number is exactly a native to script conversion. The
indexed load on an int array trusts the stored length word, which the
setLengthUnsafe builtin can corrupt: together they form the out-of-bounds
read primitive. newOption leaves one record word unwritten and exposes
whatever the backing store holds there. corruptAndRead returns an
object's header word outright. All three are opt-in: a program that never
calls them cannot observe an address.
"""

from __future__ import annotations

import enum
import math
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import aslr
from .aslr import AddressSpace
from .bytecode import BUILTIN_CATALOGUE, BytecodeProgram, FuncRef, Op
from .heap import HeapError, SimHeap
from .values import (
    ArrayRef,
    IntArrayRef,
    ObjectRef,
    canonical_decode,
    canonicalize,
    display,
    format_number,
    DecodedIntArray,
    ELIDED,
)

TAG_INT_ARRAY_TYPE = 1
TAG_OBJECT_TYPE = 2
TAG_OPTION_TYPE = 3

VTABLE_STRIDE = 0x10
INT_ARRAY_MAX = 1 << 16
OPTION_RECORD_SIZE = 32
OPTION_INDEX_OFFSET = 16


class EventKind(enum.IntEnum):
    CALL_ENTER = 0
    CALL_EXIT = 1
    BUILTIN_ENTER = 2
    BUILTIN_EXIT = 3
    CONVERT = 4
    OUTPUT = 5
    FINISHED = 6
    TRAP = 7


NO_BUILTIN = 0xFFFFFFFF


@dataclass(frozen=True)
class CheckpointEvent:
    seq: int
    kind: EventKind
    site: int
    builtin: int | None
    payload: tuple[bytes, ...]
    taint: bool = False  # in-process debug flag, never serialized


@dataclass(frozen=True)
class Continue:
    pass


@dataclass(frozen=True)
class Overwrite:
    value: bytes  # canonical encoding of the replacement


@dataclass(frozen=True)
class HaltNow:
    pass


Directive = Continue | Overwrite | HaltNow


class TrapError(Exception):
    def __init__(self, category: str):
        super().__init__(category)
        self.category = category


class ProtocolError(Exception):
    """Checkpoint protocol misuse: bad directive, wrong alternation."""


class VmStatus(enum.Enum):
    RUNNING = "running"
    FINISHED = "finished"
    HALTED = "halted"
    TRAPPED = "trapped"


@dataclass
class IntArrayRecord:
    addr: int
    length: int
    freed: bool = False


@dataclass
class ObjectRecord:
    header_addr: int
    fields: dict
    tag: int
    freed: bool = False


@dataclass
class _Frame:
    func: int
    pc: int
    locals: list
    stack: list


_PARSE_INT_RE = re.compile(r"\s*([+-]?\d+)")
_MAX_STEPS_DEFAULT = 50_000_000


class VmState:
    """One engine process. Single-threaded; strict event/directive alternation."""

    def __init__(
        self,
        program: BytecodeProgram,
        space: AddressSpace,
        entropy_seed: int,
        resources: str | Path | None = None,
        proc_id: int | None = None,
        extra_builtins: dict | None = None,
        clock=None,
    ):
        self.program = program
        self.space = space
        try:
            engine = space.module("engine")
        except KeyError:
            raise ValueError("address space must map an 'engine' module") from None
        self.engine_base = engine.base
        self.heap = SimHeap(base=space.heap_base, limit=space.heap_base + aslr.HEAP_REGION_SIZE)
        self.rng = random.Random(entropy_seed)
        self.entropy_seed = entropy_seed
        self.resources = Path(resources) if resources is not None else None
        self.proc_id = proc_id if proc_id is not None else 1
        self.clock = clock if clock is not None else time.time_ns
        self.extra_builtins = dict(extra_builtins or {})
        arities = dict(BUILTIN_CATALOGUE)
        for name, (arity, _impl) in self.extra_builtins.items():
            arities[name] = arity
        self.arities = arities
        self.seq = 0
        self.status = VmStatus.RUNNING
        self.out: list[str] = []
        self.arrays: list[list] = []
        self.objects: list[ObjectRecord] = []
        self.int_arrays: list[IntArrayRecord] = []
        self.frames = [
            _Frame(0, 0, [None] * program.functions[0].local_count, [])
        ]
        self.awaiting: tuple[EventKind, tuple] | None = None
        self.resume: tuple | None = None
        self._taint_flag = False
        self._last_site = 0
        self.steps = 0
        self.max_steps = _MAX_STEPS_DEFAULT

    # resolver protocol for canonicalize/display

    def array_items(self, handle: int) -> list:
        return self.arrays[handle]

    def object_fields(self, handle: int) -> dict:
        return self.objects[handle].fields

    def int_array_words(self, handle: int) -> list[int]:
        rec = self.int_arrays[handle]
        return [self.heap.load(rec.addr + 8 + 4 * k) for k in range(rec.length)]

    # checkpoint machinery

    def vtable(self, tag: int) -> int:
        return self.engine_base + VTABLE_STRIDE * tag

    def _emit(self, kind, site, builtin, values, action) -> CheckpointEvent:
        self.seq += 1
        payload = tuple(canonicalize(v, self) for v in values)
        ev = CheckpointEvent(
            seq=self.seq,
            kind=kind,
            site=site,
            builtin=builtin,
            payload=payload,
            taint=self._taint_flag,
        )
        self._taint_flag = False
        self.awaiting = (kind, action)
        return ev

    def run_to_checkpoint(self) -> CheckpointEvent:
        if self.status is not VmStatus.RUNNING:
            raise ProtocolError(f"vm is {self.status.value}, not runnable")
        if self.awaiting is not None:
            raise ProtocolError("a directive is owed for the previous event")
        try:
            if self.resume is not None:
                action = self.resume
                self.resume = None
                ev = self._perform(action)
                if ev is not None:
                    return ev
            return self._interpret()
        except TrapError as t:
            return self._emit(
                EventKind.TRAP, self._last_site, None, [t.category], ("trap",)
            )
        except HeapError as h:
            return self._emit(
                EventKind.TRAP, self._last_site, None, ["heap-error"], ("trap",)
            )

    def apply_directive(self, d: Directive):
        if self.awaiting is None:
            raise ProtocolError("no event awaiting a directive")
        kind, action = self.awaiting
        self.awaiting = None
        if isinstance(d, HaltNow):
            self.status = VmStatus.HALTED
            return
        if isinstance(d, Overwrite):
            if kind not in (EventKind.BUILTIN_EXIT, EventKind.CONVERT):
                raise ProtocolError(f"overwrite not valid at {kind.name}")
            value = self._materialize(canonical_decode(d.value))
            action = ("push", value)
        elif not isinstance(d, Continue):
            raise ProtocolError(f"unknown directive {d!r}")
        if kind is EventKind.FINISHED:
            self.status = VmStatus.FINISHED
            return
        if kind is EventKind.TRAP:
            self.status = VmStatus.TRAPPED
            return
        self.resume = action

    def _materialize(self, decoded):
        """Turn a decoded canonical value back into a script value."""
        if decoded is None or isinstance(decoded, (bool, float, str, FuncRef)):
            return decoded
        if isinstance(decoded, list):
            items = [self._materialize(v) for v in decoded]
            self.arrays.append(items)
            return ArrayRef(len(self.arrays) - 1)
        if isinstance(decoded, dict):
            fields = {k: self._materialize(v) for k, v in decoded.items()}
            addr = self.heap.alloc(16, "object")
            self.heap.store(addr, self.vtable(TAG_OBJECT_TYPE))
            self.heap.mark_tainted(addr)
            self.objects.append(ObjectRecord(addr, fields, TAG_OBJECT_TYPE))
            return ObjectRef(len(self.objects) - 1)
        if isinstance(decoded, DecodedIntArray):
            ref = self._make_int_array(len(decoded.words))
            rec = self.int_arrays[ref.handle]
            for k, w in enumerate(decoded.words):
                self.heap.store(rec.addr + 8 + 4 * k, w)
            return ref
        if decoded is ELIDED:
            raise ProtocolError("cannot materialize an elided value")
        raise ProtocolError(f"cannot materialize {decoded!r}")

    def _perform(self, action) -> CheckpointEvent | None:
        op = action[0]
        if op == "push":
            self.frames[-1].stack.append(action[1])
            return None
        if op == "call":
            _tag, fidx, args = action
            fn = self.program.functions[fidx]
            locals_ = list(args) + [None] * (fn.local_count - len(args))
            self.frames.append(_Frame(fidx, 0, locals_, []))
            return None
        if op == "ret":
            self.frames.pop()
            self.frames[-1].stack.append(action[1])
            return None
        if op == "output":
            _tag, value, push_null = action
            self.out.append(display(value, self))
            if push_null:
                self.frames[-1].stack.append(None)
            return None
        if op == "builtin":
            _tag, bid, args, site = action
            return self._run_builtin(bid, args, site)
        raise ProtocolError(f"unknown resume action {op!r}")

    # interpreter loop

    def _interpret(self) -> CheckpointEvent:
        frames = self.frames
        functions = self.program.functions
        consts = self.program.consts
        while True:
            self.steps += 1
            if self.steps > self.max_steps:
                raise TrapError("step-budget")
            frame = frames[-1]
            ins = functions[frame.func].code[frame.pc]
            frame.pc += 1
            op = ins.op
            if ins.site:
                self._last_site = ins.site
            stack = frame.stack
            if op is Op.LOAD_CONST:
                stack.append(consts[ins.a])
            elif op is Op.LOAD_LOCAL:
                stack.append(frame.locals[ins.a])
            elif op is Op.STORE_LOCAL:
                frame.locals[ins.a] = stack.pop()
            elif op is Op.ADD:
                b = stack.pop()
                a = stack.pop()
                if isinstance(a, str) and isinstance(b, str):
                    stack.append(a + b)
                else:
                    stack.append(self._arith(a, b, lambda x, y: x + y))
            elif op is Op.SUB:
                b = stack.pop()
                a = stack.pop()
                stack.append(self._arith(a, b, lambda x, y: x - y))
            elif op is Op.MUL:
                b = stack.pop()
                a = stack.pop()
                stack.append(self._arith(a, b, lambda x, y: x * y))
            elif op is Op.DIV:
                b = stack.pop()
                a = stack.pop()
                self._require_number(a)
                self._require_number(b)
                if b == 0.0:
                    raise TrapError("div-zero")
                stack.append(self._finite(a / b))
            elif op is Op.MOD:
                b = stack.pop()
                a = stack.pop()
                self._require_number(a)
                self._require_number(b)
                if b == 0.0:
                    raise TrapError("div-zero")
                stack.append(self._finite(math.fmod(a, b)))
            elif op is Op.EQ:
                b = stack.pop()
                a = stack.pop()
                stack.append(self._equals(a, b))
            elif op is Op.LT:
                b = stack.pop()
                a = stack.pop()
                stack.append(self._compare(a, b, lambda x, y: x < y))
            elif op is Op.GT:
                b = stack.pop()
                a = stack.pop()
                stack.append(self._compare(a, b, lambda x, y: x > y))
            elif op is Op.NOT:
                stack.append(not self._truthy(stack.pop()))
            elif op is Op.JMP:
                frame.pc = ins.a
            elif op is Op.JMP_IF_FALSE:
                if not self._truthy(stack.pop()):
                    frame.pc = ins.a
            elif op is Op.CALL:
                args = self._pop_args(stack, ins.b)
                return self._emit(
                    EventKind.CALL_ENTER,
                    ins.site,
                    None,
                    args,
                    ("call", ins.a, args),
                )
            elif op is Op.CALL_BUILTIN:
                args = self._pop_args(stack, ins.b)
                return self._emit(
                    EventKind.BUILTIN_ENTER,
                    ins.site,
                    ins.a,
                    args,
                    ("builtin", ins.a, args, ins.site),
                )
            elif op is Op.RETURN:
                value = stack.pop()
                return self._emit(
                    EventKind.CALL_EXIT, ins.site, None, [value], ("ret", value)
                )
            elif op is Op.NEW_ARRAY:
                items = self._pop_args(stack, ins.a)
                self.arrays.append(items)
                stack.append(ArrayRef(len(self.arrays) - 1))
            elif op is Op.NEW_OBJECT:
                stack.append(self._make_object())
            elif op is Op.NEW_INT_ARRAY:
                n = stack.pop()
                stack.append(self._make_int_array(self._int_value(n, "alloc-size")))
            elif op is Op.INDEX:
                idx = stack.pop()
                obj = stack.pop()
                if isinstance(obj, ArrayRef):
                    items = self.arrays[obj.handle]
                    i = self._int_value(idx, "type-error")
                    if not 0 <= i < len(items):
                        raise TrapError("oob")
                    stack.append(items[i])
                elif isinstance(obj, IntArrayRef):
                    i = self._int_value(idx, "type-error")
                    value = self._int_array_load(obj, i)
                    return self._emit(
                        EventKind.CONVERT,
                        ins.site,
                        self.program.builtin_id("readIndex"),
                        [value],
                        ("push", value),
                    )
                else:
                    raise TrapError("type-error")
            elif op is Op.INDEX_STORE:
                value = stack.pop()
                idx = stack.pop()
                obj = stack.pop()
                self._index_store(obj, idx, value)
            elif op is Op.GET_FIELD:
                obj = stack.pop()
                if not isinstance(obj, ObjectRef):
                    raise TrapError("type-error")
                name = consts[ins.a]
                stack.append(self.objects[obj.handle].fields.get(name))
            elif op is Op.SET_FIELD:
                value = stack.pop()
                obj = stack.pop()
                if not isinstance(obj, ObjectRef):
                    raise TrapError("type-error")
                self.objects[obj.handle].fields[consts[ins.a]] = value
            elif op is Op.TO_NUMBER:
                v = stack.pop()
                cand = self._to_number(v)
                return self._emit(
                    EventKind.CONVERT, ins.site, ins.b, [cand], ("push", cand)
                )
            elif op is Op.TO_STRING:
                v = stack.pop()
                cand = self._to_string(v)
                return self._emit(
                    EventKind.CONVERT, ins.site, ins.b, [cand], ("push", cand)
                )
            elif op is Op.OUTPUT:
                v = stack.pop()
                return self._emit(
                    EventKind.OUTPUT, ins.site, None, [v], ("output", v, False)
                )
            elif op is Op.HALT:
                return self._emit(EventKind.FINISHED, 0, None, [], ("finish",))
            else:  # pragma: no cover
                raise TrapError("bad-opcode")

    @staticmethod
    def _pop_args(stack: list, n: int) -> list:
        if n == 0:
            return []
        args = stack[-n:]
        del stack[-n:]
        return args

    # value helpers

    @staticmethod
    def _is_number(v) -> bool:
        return isinstance(v, float) and not isinstance(v, bool)

    def _require_number(self, v):
        if not self._is_number(v):
            raise TrapError("type-error")

    def _arith(self, a, b, fn):
        self._require_number(a)
        self._require_number(b)
        return self._finite(fn(a, b))

    @staticmethod
    def _finite(v: float) -> float:
        if v in (float("inf"), float("-inf")):
            raise TrapError("overflow")
        return v

    def _compare(self, a, b, fn) -> bool:
        if self._is_number(a) and self._is_number(b):
            return bool(fn(a, b))
        if isinstance(a, str) and isinstance(b, str):
            return bool(fn(a, b))
        raise TrapError("type-error")

    @staticmethod
    def _equals(a, b) -> bool:
        if isinstance(a, bool) or isinstance(b, bool):
            return a is b
        if VmState._is_number(a) and VmState._is_number(b):
            return a == b
        if isinstance(a, str) and isinstance(b, str):
            return a == b
        if a is None or b is None:
            return a is None and b is None
        return a == b  # refs: dataclass equality means same handle

    @staticmethod
    def _truthy(v) -> bool:
        if v is None:
            return False
        if isinstance(v, bool):
            return v
        if isinstance(v, float):
            return v == v and v != 0.0
        if isinstance(v, str):
            return len(v) > 0
        return True

    def _int_value(self, v, category: str) -> int:
        if not self._is_number(v) or v != v or v != int(v):
            raise TrapError(category)
        return int(v)

    def _to_number(self, v) -> float:
        if v is None:
            return 0.0
        if isinstance(v, bool):
            return 1.0 if v else 0.0
        if self._is_number(v):
            return v
        if isinstance(v, str):
            try:
                out = float(v.strip()) if v.strip() else 0.0
            except ValueError:
                return float("nan")
            if out in (float("inf"), float("-inf")):
                return float("nan")
            return out
        raise TrapError("type-error")

    def _to_string(self, v) -> str:
        if v is None:
            return "null"
        if isinstance(v, bool):
            return "true" if v else "false"
        if self._is_number(v):
            return format_number(v)
        if isinstance(v, str):
            return v
        raise TrapError("type-error")

    # heap-backed values

    def _make_object(self) -> ObjectRef:
        addr = self.heap.alloc(16, "object")
        self.heap.store(addr, self.vtable(TAG_OBJECT_TYPE))
        self.heap.mark_tainted(addr)
        self.objects.append(ObjectRecord(addr, {}, TAG_OBJECT_TYPE))
        return ObjectRef(len(self.objects) - 1)

    def _make_int_array(self, n: int) -> IntArrayRef:
        if not 0 <= n <= INT_ARRAY_MAX:
            raise TrapError("alloc-size")
        addr = self.heap.alloc((2 + n) * 4, "int-array")
        self.heap.store(addr, self.vtable(TAG_INT_ARRAY_TYPE))
        self.heap.mark_tainted(addr)
        self.heap.store(addr + 4, n)
        for k in range(n):
            self.heap.store(addr + 8 + 4 * k, 0)
        self.int_arrays.append(IntArrayRecord(addr, n))
        return IntArrayRef(len(self.int_arrays) - 1)

    def _int_array_load(self, ref: IntArrayRef, i: int) -> float:
        rec = self.int_arrays[ref.handle]
        stored_len = self.heap.load(rec.addr + 4)
        if not 0 <= i < stored_len:
            raise TrapError("oob")
        addr = rec.addr + 8 + 4 * i
        if not aslr.is_mapped(self.space, addr):
            raise TrapError("unmapped-read")
        if self.heap.is_tainted(addr):
            self._taint_flag = True
        return float(self.heap.load(addr))

    def _index_store(self, obj, idx, value):
        if isinstance(obj, ArrayRef):
            items = self.arrays[obj.handle]
            i = self._int_value(idx, "type-error")
            if not 0 <= i < len(items):
                raise TrapError("oob")
            items[i] = value
            return
        if isinstance(obj, IntArrayRef):
            rec = self.int_arrays[obj.handle]
            i = self._int_value(idx, "type-error")
            stored_len = self.heap.load(rec.addr + 4)
            if not 0 <= i < stored_len:
                raise TrapError("oob")
            self._require_number(value)
            if value != value:
                word = 0
            else:
                word = int(value) & 0xFFFFFFFF
            addr = rec.addr + 8 + 4 * i
            if not aslr.is_mapped(self.space, addr):
                raise TrapError("unmapped-read")
            self.heap.store(addr, word)
            return
        raise TrapError("type-error")

    # builtins

    def _run_builtin(self, bid: int, args: list, site: int) -> CheckpointEvent:
        name = self.program.builtins[bid]
        arity = self.arities.get(name)
        if arity is None:
            raise TrapError("unknown-builtin")
        if len(args) != arity:
            raise TrapError("arity")
        if name == "print":
            return self._emit(
                EventKind.OUTPUT, site, bid, [args[0]], ("output", args[0], True)
            )
        value = self.invoke_builtin(bid, args)
        return self._emit(
            EventKind.BUILTIN_EXIT, site, bid, [value], ("push", value)
        )

    def invoke_builtin(self, bid: int, args: list):
        """Compute a builtin's value. print is handled at the event layer."""
        name = self.program.builtins[bid]
        if name in self.extra_builtins:
            _arity, impl = self.extra_builtins[name]
            return impl(self, args)
        method = getattr(self, f"_builtin_{name}", None)
        if method is None:
            raise TrapError("unknown-builtin")
        return method(args)

    def _builtin_len(self, args):
        v = args[0]
        if isinstance(v, str):
            return float(len(v))
        if isinstance(v, ArrayRef):
            return float(len(self.arrays[v.handle]))
        if isinstance(v, IntArrayRef):
            return float(self.int_arrays[v.handle].length)
        raise TrapError("type-error")

    def _builtin_abs(self, args):
        self._require_number(args[0])
        return abs(args[0])

    def _builtin_floor(self, args):
        self._require_number(args[0])
        if args[0] != args[0]:
            return float("nan")
        return float(math.floor(args[0]))

    def _builtin_parseInt(self, args):
        v = args[0]
        if self._is_number(v):
            if v != v:
                return float("nan")
            return float(math.trunc(v))
        if isinstance(v, str):
            m = _PARSE_INT_RE.match(v)
            if not m:
                return float("nan")
            return float(int(m.group(1)))
        raise TrapError("type-error")

    def _builtin_charAt(self, args):
        s, i = args
        if not isinstance(s, str):
            raise TrapError("type-error")
        idx = self._int_value(i, "type-error")
        return s[idx] if 0 <= idx < len(s) else ""

    def _builtin_substr(self, args):
        s, start, length = args
        if not isinstance(s, str):
            raise TrapError("type-error")
        b = max(0, min(len(s), self._int_value(start, "type-error")))
        n = max(0, self._int_value(length, "type-error"))
        return s[b : b + n]

    def _builtin_toNumber(self, args):
        return self._to_number(args[0])

    def _builtin_toString(self, args):
        return self._to_string(args[0])

    def _builtin_random(self, args):
        return self.rng.random()

    def _builtin_now(self, args):
        return self.clock() / 1e6

    def _builtin_pid(self, args):
        return float(self.proc_id)

    def _builtin_fetch(self, args):
        name = args[0]
        if not isinstance(name, str) or not name:
            raise TrapError("type-error")
        parts = name.replace("\\", "/").split("/")
        if name.startswith("/") or ".." in parts:
            raise TrapError("bad-resource")
        if self.resources is None:
            return ""  # replay stub: the supervisor overwrites with master data
        path = self.resources / name
        if not path.is_file():
            raise TrapError("resource-missing")
        return path.read_text(encoding="utf-8")

    def _builtin_intArray(self, args):
        n = self._int_value(args[0], "alloc-size")
        return self._make_int_array(n)

    def _builtin_setLengthUnsafe(self, args):
        a, n = args
        if not isinstance(a, IntArrayRef):
            raise TrapError("type-error")
        self._require_number(n)
        rec = self.int_arrays[a.handle]
        self.heap.store(rec.addr + 4, int(n) & 0xFFFFFFFF)
        return a

    def _builtin_newOption(self, args):
        addr = self.heap.alloc(OPTION_RECORD_SIZE, "option")
        self.heap.store(addr, self.vtable(TAG_OPTION_TYPE))
        self.heap.mark_tainted(addr)
        # the index word is never written: it reads back whatever the
        # backing store holds, zero on a fresh page, stale after reuse
        stale_addr = addr + OPTION_INDEX_OFFSET
        if self.heap.is_tainted(stale_addr):
            self._taint_flag = True
        index = float(self.heap.load(stale_addr))
        self.objects.append(
            ObjectRecord(addr, {"index": index}, TAG_OPTION_TYPE)
        )
        return ObjectRef(len(self.objects) - 1)

    def _builtin_corruptAndRead(self, args):
        obj = args[0]
        if not isinstance(obj, ObjectRef):
            raise TrapError("type-error")
        rec = self.objects[obj.handle]
        if self.heap.is_tainted(rec.header_addr):
            self._taint_flag = True
        return float(self.heap.load(rec.header_addr))

    def _builtin_discard(self, args):
        ref = args[0]
        if isinstance(ref, IntArrayRef):
            rec = self.int_arrays[ref.handle]
        elif isinstance(ref, ObjectRef):
            rec = self.objects[ref.handle]
        else:
            raise TrapError("type-error")
        if rec.freed:
            raise TrapError("use-after-free")
        addr = rec.addr if isinstance(rec, IntArrayRecord) else rec.header_addr
        self.heap.free(addr)
        rec.freed = True
        return None

    def _builtin_readIndex(self, args):
        a, i = args
        if not isinstance(a, IntArrayRef):
            raise TrapError("type-error")
        return self._int_array_load(a, self._int_value(i, "type-error"))


def vm_create(
    program: BytecodeProgram,
    space: AddressSpace,
    entropy_seed: int,
    **kwargs,
) -> VmState:
    """Build a VM over a fully constructed address space."""
    return VmState(program, space, entropy_seed, **kwargs)


def run_to_checkpoint(vm: VmState) -> CheckpointEvent:
    return vm.run_to_checkpoint()


def apply_directive(vm: VmState, d: Directive):
    vm.apply_directive(d)


def invoke_builtin(vm: VmState, bid: int, args: list):
    return vm.invoke_builtin(bid, args)


def run_solo(vm: VmState, max_events: int = 1_000_000) -> list[CheckpointEvent]:
    """Drive one VM to completion with Continue at every checkpoint."""
    events: list[CheckpointEvent] = []
    for _ in range(max_events):
        ev = vm.run_to_checkpoint()
        events.append(ev)
        vm.apply_directive(Continue())
        if ev.kind in (EventKind.FINISHED, EventKind.TRAP):
            return events
    raise ProtocolError("event budget exceeded")
