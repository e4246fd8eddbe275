"""Lockstep supervisor: drives the master/twin pair and classifies divergence.

Per paired sequence number the supervisor receives one event from each
engine (master first), compares them, and answers with directives:

    kind/site/builtin mismatch        control-flow divergence
    payload bytes equal               match
    differing BuiltinExit/Convert
      with the builtin registered     entropy normalized / replayed
                                      (master value copied onto the twin)
    anything else                     leak

Comparison is bytewise on canonical payloads with zero numeric tolerance.
In enforce mode a leak or divergence halts both engines immediately. In
calibrate mode, which is only for trusted-benign corpora, a would-be leak
at a builtin-valued event teaches the registry instead of alerting; that
is also why a vulnerable builtin run under calibration gets silently
learned, the documented under-approximation hazard of incremental entropy
discovery.
"""

from __future__ import annotations

import json
import os
import select
import statistics
import struct
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import aslr
from .aslr import AddressSpace, module_of
from .bytecode import BytecodeProgram
from .values import canonical_decode, first_divergence
from .vm import (
    CheckpointEvent,
    Continue,
    EventKind,
    HaltNow,
    Overwrite,
    VmState,
    VmStatus,
    run_solo,
    vm_create,
)
from .wire import (
    ByeMsg,
    ChannelClosed,
    DirectiveMsg,
    EventMsg,
    FaultMsg,
    HelloMsg,
    RecvTimeout,
    ReplayCache,
    WireDecodeError,
    decode,
    encode,
)

ENTROPY = "entropy"
REPLAY = "replay"

MODE_ENFORCE = "enforce"
MODE_CALIBRATE = "calibrate"


class EngineFault(Exception):
    pass


class EntropyRegistry:
    """Builtin classification: entropy values are copied, inputs replayed.

    Entries are add-only for the lifetime of a session.
    """

    def __init__(self):
        self._entries: dict[str, str] = {}
        self._provenance: dict[str, str] = {}

    @classmethod
    def default(cls) -> "EntropyRegistry":
        reg = cls()
        for name in ("random", "now", "pid"):
            reg.add(name, ENTROPY)
        reg.add("fetch", REPLAY)
        return reg

    def add(self, name: str, kind: str, provenance: str = "builtin-catalogue default"):
        if kind not in (ENTROPY, REPLAY):
            raise ValueError(f"bad registry kind {kind!r}")
        if name in self._entries and self._entries[name] != kind:
            raise ValueError(f"registry entry {name!r} cannot change kind")
        self._entries[name] = kind
        self._provenance.setdefault(name, provenance)

    def kind_of(self, name: str) -> str | None:
        return self._entries.get(name)

    def provenance_of(self, name: str) -> str | None:
        return self._provenance.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def items(self):
        return list(self._entries.items())

    def copy(self) -> "EntropyRegistry":
        reg = EntropyRegistry()
        reg._entries = dict(self._entries)
        reg._provenance = dict(self._provenance)
        return reg

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for name, kind in self._entries.items():
                fh.write(f"{name} {kind}\n")

    @classmethod
    def load(cls, path) -> "EntropyRegistry":
        reg = cls()
        with open(path, "r", encoding="utf-8") as fh:
            for ln, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) != 2 or parts[1] not in (ENTROPY, REPLAY):
                    raise ValueError(f"{path}:{ln}: expected 'name entropy|replay'")
                reg.add(parts[0], parts[1], provenance="registry file")
        return reg


# verdicts


@dataclass(frozen=True)
class Match:
    pass


@dataclass(frozen=True)
class EntropyNormalized:
    builtin: str


@dataclass(frozen=True)
class Replayed:
    builtin: str


@dataclass(frozen=True)
class LeakReport:
    seq: int
    site: int
    line: int
    col: int
    builtin: str | None
    master_value: object
    twin_value: object
    divergence_offset: int
    master_module: str | None
    twin_module: str | None
    timestamp: float

    def describe(self) -> str:
        parts = [
            f"leak at site {self.site} ({self.line}:{self.col}), seq {self.seq}"
        ]
        if self.builtin:
            parts.append(f"builtin {self.builtin}")
        parts.append(f"master {self.master_value!r}")
        parts.append(f"twin {self.twin_value!r}")
        parts.append(f"first divergent byte {self.divergence_offset}")
        if self.master_module or self.twin_module:
            parts.append(
                f"attribution {self.master_module or '?'}/{self.twin_module or '?'}"
            )
        return "; ".join(parts)


@dataclass(frozen=True)
class Leak:
    report: LeakReport


@dataclass(frozen=True)
class ControlFlowDivergence:
    detail: str


@dataclass(frozen=True)
class Fault:
    detail: str


Verdict = Match | EntropyNormalized | Replayed | Leak | ControlFlowDivergence | Fault


def _payload_divergence(me: EventMsg, te: EventMsg):
    """Locate the first differing atom across the paired payload lists."""
    base = 0
    for mb, tb in zip(me.payload, te.payload):
        if mb != tb:
            found = first_divergence(mb, tb)
            if found is None:  # only lengths differ past common prefix
                return base + min(len(mb), len(tb)), None, None
            off, leaf_m, leaf_t = found
            return base + off, leaf_m, leaf_t
        base += len(mb)
    return base, None, None


def _attribute(value, space: AddressSpace | None) -> str | None:
    if space is None or not isinstance(value, float):
        return None
    if value != value or value != int(value) or not 0 <= value < 2**32:
        return None
    region = module_of(space, int(value))
    return None if region == "unmapped" else region


def compare_events(
    me: EventMsg,
    te: EventMsg,
    registry: EntropyRegistry,
    builtin_names: tuple[str, ...],
    master_space: AddressSpace | None = None,
    twin_space: AddressSpace | None = None,
    site_loc=None,
) -> Verdict:
    """The decision table for one paired event."""
    if me.kind != te.kind or me.site != te.site or me.builtin != te.builtin:
        return ControlFlowDivergence(
            f"seq {me.seq}: master {me.kind.name}@{me.site}"
            f" vs twin {te.kind.name}@{te.site}"
        )
    if me.payload == te.payload:
        return Match()
    builtin_name = None
    if me.builtin is not None and me.builtin < len(builtin_names):
        builtin_name = builtin_names[me.builtin]
    if (
        me.kind in (EventKind.BUILTIN_EXIT, EventKind.CONVERT)
        and builtin_name is not None
        and builtin_name in registry
    ):
        if registry.kind_of(builtin_name) == ENTROPY:
            return EntropyNormalized(builtin_name)
        return Replayed(builtin_name)
    offset, leaf_m, leaf_t = _payload_divergence(me, te)
    if leaf_m is None and me.payload:
        leaf_m = canonical_decode(me.payload[0]) if me.payload[0] else None
    if leaf_t is None and te.payload:
        leaf_t = canonical_decode(te.payload[0]) if te.payload[0] else None
    line, col = site_loc(me.site) if site_loc else (0, 0)
    report = LeakReport(
        seq=me.seq,
        site=me.site,
        line=line,
        col=col,
        builtin=builtin_name,
        master_value=leaf_m,
        twin_value=leaf_t,
        divergence_offset=offset,
        master_module=_attribute(leaf_m, master_space),
        twin_module=_attribute(leaf_t, twin_space),
        timestamp=time.time(),
    )
    return Leak(report)


@dataclass
class RunReport:
    verdict: str = "clean"
    leaks: list[LeakReport] = field(default_factory=list)
    event_count: int = 0
    dual_wall_ms: float | None = None
    single_wall_ms: float | None = None
    normalizations: int = 0
    replays: int = 0
    calibration_additions: list[str] = field(default_factory=list)
    trap: str | None = None
    fault_detail: str | None = None

    def to_text(self) -> str:
        lines = [f"verdict: {self.verdict}"]
        for leak in self.leaks:
            lines.append(leak.describe())
        lines.append(f"event_count: {self.event_count}")
        if self.dual_wall_ms is not None:
            lines.append(f"dual_wall_ms: {self.dual_wall_ms:.3f}")
        if self.single_wall_ms is not None:
            lines.append(f"single_wall_ms: {self.single_wall_ms:.3f}")
        lines.append(f"normalizations: {self.normalizations}")
        lines.append(f"replays: {self.replays}")
        if self.calibration_additions:
            lines.append(f"calibration_additions: {' '.join(self.calibration_additions)}")
        if self.trap:
            lines.append(f"trap: {self.trap}")
        if self.fault_detail:
            lines.append(f"fault: {self.fault_detail}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "leaks": [
                {
                    "seq": l.seq,
                    "site": l.site,
                    "line": l.line,
                    "col": l.col,
                    "builtin": l.builtin,
                    "master_value": repr(l.master_value),
                    "twin_value": repr(l.twin_value),
                    "divergence_offset": l.divergence_offset,
                    "master_module": l.master_module,
                    "twin_module": l.twin_module,
                    "timestamp": l.timestamp,
                }
                for l in self.leaks
            ],
            "event_count": self.event_count,
            "dual_wall_ms": self.dual_wall_ms,
            "single_wall_ms": self.single_wall_ms,
            "normalizations": self.normalizations,
            "replays": self.replays,
            "calibration_additions": list(self.calibration_additions),
            "trap": self.trap,
            "fault": self.fault_detail,
        }


# engine endpoints


class InprocEngine:
    """Runs a VM on the caller's thread, framed through encode/decode so the
    in-memory transport is bit-identical to the pipe transport."""

    def __init__(self, vm: VmState, role: str):
        self.vm = vm
        self.role = role

    def handshake(self) -> HelloMsg:
        msg = decode(encode(HelloMsg(payload=self.role.encode("utf-8"))))
        return msg

    def recv_event(self, timeout: float) -> EventMsg:
        try:
            ev = self.vm.run_to_checkpoint()
        except Exception as e:
            raise EngineFault(f"{self.role}: {e}") from e
        msg = decode(encode(EventMsg.from_event(ev)))
        assert isinstance(msg, EventMsg)
        return msg

    def send_directive(self, msg: DirectiveMsg):
        out = decode(encode(msg))
        assert isinstance(out, DirectiveMsg)
        if out.seq != self.vm.seq:
            raise EngineFault(f"{self.role}: directive seq {out.seq} != {self.vm.seq}")
        try:
            self.vm.apply_directive(out.directive)
        except Exception as e:
            raise EngineFault(f"{self.role}: {e}") from e

    def close(self):
        pass


def _read_exact(fd: int, n: int, deadline: float) -> bytes | None:
    chunks = []
    remaining = n
    while remaining > 0:
        budget = deadline - time.monotonic()
        if budget <= 0:
            raise RecvTimeout(f"no frame within budget")
        ready, _, _ = select.select([fd], [], [], budget)
        if not ready:
            continue
        chunk = os.read(fd, remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class OsProcEngine:
    """A real child process speaking the frame protocol over stdio pipes."""

    def __init__(self, config: dict, role: str, timeout: float):
        self.role = role
        self.timeout = timeout
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "twinscript.engine"],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            bufsize=0,
        )
        self._send_msg(HelloMsg(payload=json.dumps(config).encode("utf-8")))

    def _send_msg(self, msg):
        frame = encode(msg)
        self.proc.stdin.write(frame)
        self.proc.stdin.flush()

    def _recv_msg(self, timeout: float):
        deadline = time.monotonic() + timeout
        fd = self.proc.stdout.fileno()
        header = _read_exact(fd, 4, deadline)
        if header is None:
            raise ChannelClosed(f"{self.role}: engine closed the pipe")
        (length,) = struct.unpack("<I", header)
        body = _read_exact(fd, length, deadline)
        if body is None:
            raise ChannelClosed(f"{self.role}: engine closed mid-frame")
        return decode(header + body)

    def handshake(self) -> HelloMsg:
        msg = self._recv_msg(self.timeout)
        if isinstance(msg, FaultMsg):
            raise EngineFault(f"{self.role}: {msg.detail}")
        if not isinstance(msg, HelloMsg):
            raise EngineFault(f"{self.role}: expected hello, got {msg!r}")
        return msg

    def recv_event(self, timeout: float) -> EventMsg:
        msg = self._recv_msg(timeout)
        if isinstance(msg, FaultMsg):
            raise EngineFault(f"{self.role}: {msg.detail}")
        if not isinstance(msg, EventMsg):
            raise EngineFault(f"{self.role}: expected event, got {type(msg).__name__}")
        return msg

    def send_directive(self, msg: DirectiveMsg):
        try:
            self._send_msg(msg)
        except (BrokenPipeError, OSError) as e:
            raise EngineFault(f"{self.role}: {e}") from e

    def close(self):
        try:
            if self.proc.poll() is None:
                try:
                    # give the engine a moment to send Bye and exit
                    self.proc.wait(timeout=1.0)
                except subprocess.TimeoutExpired:
                    self.proc.kill()
                    self.proc.wait(timeout=5.0)
        finally:
            for pipe in (self.proc.stdin, self.proc.stdout):
                try:
                    pipe.close()
                except OSError:
                    pass


# sessions


class Session:
    def __init__(
        self,
        master,
        twin,
        program: BytecodeProgram,
        master_space: AddressSpace,
        twin_space: AddressSpace,
        registry: EntropyRegistry,
        mode: str,
        timeout: float,
    ):
        self.master = master
        self.twin = twin
        self.program = program
        self.master_space = master_space
        self.twin_space = twin_space
        self.registry = registry
        self.mode = mode
        self.timeout = timeout
        self.cache = ReplayCache()
        self.report = RunReport()
        self.done = False
        self._mseq = 0
        self._tseq = 0

    def _finish(self, verdict: str, fault: str | None = None):
        self.report.verdict = verdict
        self.report.fault_detail = fault
        self.done = True

    def _halt_both(self):
        for endpoint, seq in ((self.master, self._mseq), (self.twin, self._tseq)):
            try:
                endpoint.send_directive(DirectiveMsg(seq, HaltNow()))
            except EngineFault:
                pass

    def step(self) -> Verdict:
        if self.done:
            raise RuntimeError("session already ended")
        try:
            me = self.master.recv_event(self.timeout)
            te = self.twin.recv_event(self.timeout)
        except (RecvTimeout, ChannelClosed, EngineFault, WireDecodeError) as e:
            self._finish("fault", str(e))
            self._teardown()
            return Fault(str(e))
        self._mseq, self._tseq = me.seq, te.seq
        self.report.event_count += 2
        if me.seq != te.seq:
            detail = f"lockstep sequence skew: master {me.seq}, twin {te.seq}"
            self._halt_both()
            self._finish("fault", detail)
            self._teardown()
            return Fault(detail)
        verdict = compare_events(
            me,
            te,
            self.registry,
            self.program.builtins,
            self.master_space,
            self.twin_space,
            self.program.site_loc,
        )
        if self.mode == MODE_CALIBRATE and isinstance(verdict, Leak):
            if (
                me.kind in (EventKind.BUILTIN_EXIT, EventKind.CONVERT)
                and me.builtin is not None
            ):
                name = self.program.builtins[me.builtin]
                self.registry.add(name, ENTROPY, provenance="calibration-learned")
                self.report.calibration_additions.append(name)
                verdict = EntropyNormalized(name)
            else:
                detail = (
                    f"calibration cannot explain divergence at"
                    f" {me.kind.name} site {me.site}"
                )
                self._halt_both()
                self._finish("fault", detail)
                self._teardown()
                return Fault(detail)
        return self._dispatch(verdict, me, te)

    def _dispatch(self, verdict: Verdict, me: EventMsg, te: EventMsg) -> Verdict:
        terminal = me.kind in (EventKind.FINISHED, EventKind.TRAP)
        if isinstance(verdict, Match):
            self._continue_both(me, te)
            if terminal:
                if me.kind is EventKind.TRAP:
                    self.report.trap = repr(canonical_decode(me.payload[0]))
                self._finish("clean")
                self._teardown()
            return verdict
        if isinstance(verdict, EntropyNormalized):
            self.report.normalizations += 1
            self._copy_master_to_twin(me, te)
            return verdict
        if isinstance(verdict, Replayed):
            self.report.replays += 1
            self.cache.record(me.builtin, me.payload[0])
            value = self.cache.replay(me.builtin)
            self.master.send_directive(DirectiveMsg(me.seq, Continue()))
            self.twin.send_directive(DirectiveMsg(te.seq, Overwrite(value)))
            return verdict
        if isinstance(verdict, Leak):
            self.report.leaks.append(verdict.report)
            self._halt_both()
            self._finish("leak")
            self._teardown()
            return verdict
        if isinstance(verdict, ControlFlowDivergence):
            self._halt_both()
            self._finish("divergence", None)
            self.report.fault_detail = verdict.detail
            self._teardown()
            return verdict
        raise RuntimeError(f"unhandled verdict {verdict!r}")

    def _continue_both(self, me: EventMsg, te: EventMsg):
        self.master.send_directive(DirectiveMsg(me.seq, Continue()))
        self.twin.send_directive(DirectiveMsg(te.seq, Continue()))

    def _copy_master_to_twin(self, me: EventMsg, te: EventMsg):
        self.master.send_directive(DirectiveMsg(me.seq, Continue()))
        self.twin.send_directive(DirectiveMsg(te.seq, Overwrite(me.payload[0])))

    def _teardown(self):
        self.master.close()
        self.twin.close()

    def run(self) -> RunReport:
        start = time.perf_counter()
        while not self.done:
            self.step()
        self.report.dual_wall_ms = (time.perf_counter() - start) * 1000.0
        return self.report


def step_session(session: Session) -> Verdict:
    return session.step()


def spawn_dual(
    program: BytecodeProgram,
    catalogue,
    seeds: tuple[int, int],
    registry: EntropyRegistry,
    mode: str = MODE_ENFORCE,
    transport: str = "inproc",
    resources=None,
    timeout: float = 10.0,
    source: str | None = None,
) -> Session:
    """Build both address spaces, both engines, and shake hands."""
    seed_m, seed_t = seeds
    if seed_m == seed_t:
        raise ValueError("master and twin seeds must be distinct")
    if mode not in (MODE_ENFORCE, MODE_CALIBRATE):
        raise ValueError(f"unknown mode {mode!r}")
    master_space = aslr.build_master(catalogue, seed_m)
    twin_space = aslr.build_twin(master_space, catalogue, seed_t)
    if transport == "inproc":
        mvm = vm_create(
            program,
            master_space,
            seed_m,
            resources=resources,
            proc_id=os.getpid(),
        )
        tvm = vm_create(
            program,
            twin_space,
            seed_t,
            resources=None,  # the twin never reads inputs itself; replay covers it
            proc_id=os.getpid() + 1,
        )
        master = InprocEngine(mvm, "master")
        twin = InprocEngine(tvm, "twin")
    elif transport == "os":
        if source is None:
            raise ValueError("os transport needs the script source")
        common = {"source": source, "timeout": timeout}
        master = OsProcEngine(
            dict(common, role="master", seed=seed_m,
                 space=master_space.to_dict(),
                 resources=str(resources) if resources else None),
            "master",
            timeout,
        )
        twin = OsProcEngine(
            dict(common, role="twin", seed=seed_t,
                 space=twin_space.to_dict(), resources=None),
            "twin",
            timeout,
        )
    else:
        raise ValueError(f"unknown transport {transport!r}")
    session = Session(
        master, twin, program, master_space, twin_space, registry, mode, timeout
    )
    try:
        master.handshake()
        twin.handshake()
    except (EngineFault, RecvTimeout, ChannelClosed) as e:
        session._finish("fault", str(e))
        session._teardown()
    return session


def calibrate(session: Session) -> list[str]:
    """Run a calibration session to completion; returns learned builtins."""
    if session.mode != MODE_CALIBRATE:
        raise ValueError("session is not in calibrate mode")
    session.run()
    return list(session.report.calibration_additions)


def run_single(
    program: BytecodeProgram,
    catalogue,
    seed: int,
    resources=None,
) -> tuple[RunReport, VmState]:
    """Baseline run: one VM, no comparisons, Continue at every checkpoint."""
    space = aslr.build_master(catalogue, seed)
    vm = vm_create(program, space, seed, resources=resources, proc_id=os.getpid())
    start = time.perf_counter()
    events = run_solo(vm)
    wall = (time.perf_counter() - start) * 1000.0
    report = RunReport(verdict="clean", event_count=len(events), single_wall_ms=wall)
    if events and events[-1].kind is EventKind.TRAP:
        report.trap = repr(canonical_decode(events[-1].payload[0]))
    return report, vm


@dataclass
class BenchRow:
    name: str
    single_ms: float
    dual_ms: float

    @property
    def overhead_pct(self) -> float:
        if self.single_ms <= 0:
            return 0.0
        return (self.dual_ms / self.single_ms - 1.0) * 100.0

    @property
    def ratio(self) -> float:
        return self.dual_ms / self.single_ms if self.single_ms > 0 else float("inf")


def bench(
    program: BytecodeProgram,
    catalogue,
    repetitions: int = 5,
    seeds: tuple[int, int] = (11, 12),
    resources=None,
    name: str = "program",
) -> BenchRow:
    """Median single-run vs dual-run wall clock over >= 5 repetitions."""
    repetitions = max(5, repetitions)
    singles = []
    duals = []
    registry = EntropyRegistry.default()
    for _ in range(repetitions):
        report, _vm = run_single(program, catalogue, seeds[0], resources=resources)
        singles.append(report.single_wall_ms)
    for _ in range(repetitions):
        session = spawn_dual(
            program, catalogue, seeds, registry.copy(), resources=resources
        )
        report = session.run()
        if report.verdict == "fault":
            raise EngineFault(report.fault_detail or "bench session fault")
        duals.append(report.dual_wall_ms)
    return BenchRow(
        name=name,
        single_ms=statistics.median(singles),
        dual_ms=statistics.median(duals),
    )
