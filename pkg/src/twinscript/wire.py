"""Frame protocol, channels and the input replay cache.

Frame layout, little-endian throughout:

    u32 length   covers everything after this field
    u8  type     0 Hello, 1 Event, 2 Directive, 3 Bye, 4 Fault
    u64 seq      event sequence number, echoed in directive replies
    payload      type-specific bytes

Event payload:     u8 kind, u32 site, u32 builtin (0xFFFFFFFF for none),
                   u32 count, then per value u32 length + canonical bytes.
Directive payload: u8 tag (0 Continue, 1 Overwrite, 2 HaltNow),
                   Overwrite adds u32 length + canonical bytes.
Hello/Fault carry opaque/utf-8 payloads, Bye is empty.

decode() consumes exactly one frame and rejects anything else: trailing
bytes, truncation, unknown tags, length mismatches all raise
WireDecodeError and never anything worse, whatever the input.
"""

from __future__ import annotations

import queue
import struct
from dataclasses import dataclass

from .vm import CheckpointEvent, Continue, EventKind, HaltNow, Overwrite

MSG_HELLO = 0
MSG_EVENT = 1
MSG_DIRECTIVE = 2
MSG_BYE = 3
MSG_FAULT = 4

NO_BUILTIN_WIRE = 0xFFFFFFFF
MAX_FRAME = 64 * 1024 * 1024
DEFAULT_TIMEOUT = 10.0


class WireDecodeError(Exception):
    pass


class ChannelClosed(Exception):
    pass


class RecvTimeout(Exception):
    pass


class ReplayUnderflow(Exception):
    """A replay was requested before the matching record exists."""


@dataclass(frozen=True)
class HelloMsg:
    payload: bytes = b""
    seq: int = 0


@dataclass(frozen=True)
class EventMsg:
    seq: int
    kind: EventKind
    site: int
    builtin: int | None
    payload: tuple[bytes, ...]

    @classmethod
    def from_event(cls, ev: CheckpointEvent) -> "EventMsg":
        return cls(ev.seq, ev.kind, ev.site, ev.builtin, ev.payload)


@dataclass(frozen=True)
class DirectiveMsg:
    seq: int
    directive: object  # Continue | Overwrite | HaltNow


@dataclass(frozen=True)
class ByeMsg:
    seq: int = 0


@dataclass(frozen=True)
class FaultMsg:
    detail: str
    seq: int = 0


WireMessage = HelloMsg | EventMsg | DirectiveMsg | ByeMsg | FaultMsg


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def encode(msg: WireMessage) -> bytes:
    if isinstance(msg, HelloMsg):
        mtype, seq, payload = MSG_HELLO, msg.seq, msg.payload
    elif isinstance(msg, EventMsg):
        builtin = NO_BUILTIN_WIRE if msg.builtin is None else msg.builtin
        body = [
            struct.pack("<BII", int(msg.kind), msg.site, builtin),
            _u32(len(msg.payload)),
        ]
        for blob in msg.payload:
            body.append(_u32(len(blob)))
            body.append(blob)
        mtype, seq, payload = MSG_EVENT, msg.seq, b"".join(body)
    elif isinstance(msg, DirectiveMsg):
        d = msg.directive
        if isinstance(d, Continue):
            payload = b"\x00"
        elif isinstance(d, Overwrite):
            payload = b"\x01" + _u32(len(d.value)) + d.value
        elif isinstance(d, HaltNow):
            payload = b"\x02"
        else:
            raise TypeError(f"not a directive: {d!r}")
        mtype, seq = MSG_DIRECTIVE, msg.seq
    elif isinstance(msg, ByeMsg):
        mtype, seq, payload = MSG_BYE, msg.seq, b""
    elif isinstance(msg, FaultMsg):
        mtype, seq, payload = MSG_FAULT, msg.seq, msg.detail.encode("utf-8")
    else:
        raise TypeError(f"not a wire message: {msg!r}")
    body = struct.pack("<BQ", mtype, seq) + payload
    return _u32(len(body)) + body


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise WireDecodeError("truncated frame")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self):
        if self.pos != len(self.data):
            raise WireDecodeError("trailing bytes in frame")


def decode(frame: bytes) -> WireMessage:
    """Decode exactly one frame; rejects trailing bytes."""
    cur = _Cursor(frame)
    length = cur.u32()
    if length > MAX_FRAME:
        raise WireDecodeError("frame too large")
    if length != len(frame) - 4:
        raise WireDecodeError("length prefix does not match frame size")
    mtype = cur.u8()
    seq = cur.u64()
    if mtype == MSG_HELLO:
        payload = cur.take(length - 9)
        cur.done()
        return HelloMsg(payload=payload, seq=seq)
    if mtype == MSG_EVENT:
        kind_b = cur.u8()
        try:
            kind = EventKind(kind_b)
        except ValueError:
            raise WireDecodeError(f"unknown event kind {kind_b}") from None
        site = cur.u32()
        builtin_raw = cur.u32()
        builtin = None if builtin_raw == NO_BUILTIN_WIRE else builtin_raw
        count = cur.u32()
        if count > len(frame):
            raise WireDecodeError("value count overruns frame")
        payload = []
        for _ in range(count):
            n = cur.u32()
            payload.append(cur.take(n))
        cur.done()
        return EventMsg(seq, kind, site, builtin, tuple(payload))
    if mtype == MSG_DIRECTIVE:
        tag = cur.u8()
        if tag == 0:
            directive = Continue()
        elif tag == 1:
            n = cur.u32()
            directive = Overwrite(cur.take(n))
        elif tag == 2:
            directive = HaltNow()
        else:
            raise WireDecodeError(f"unknown directive tag {tag}")
        cur.done()
        return DirectiveMsg(seq, directive)
    if mtype == MSG_BYE:
        cur.done()
        return ByeMsg(seq=seq)
    if mtype == MSG_FAULT:
        raw = cur.take(length - 9)
        cur.done()
        try:
            detail = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise WireDecodeError("fault detail is not utf-8") from None
        return FaultMsg(detail, seq=seq)
    raise WireDecodeError(f"unknown message type {mtype}")


def decode_stream(data: bytes) -> list[WireMessage]:
    """Decode a concatenation of frames back into the original sequence."""
    out: list[WireMessage] = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise WireDecodeError("truncated length prefix")
        (length,) = struct.unpack_from("<I", data, pos)
        end = pos + 4 + length
        if length > MAX_FRAME or end > len(data):
            raise WireDecodeError("truncated frame")
        out.append(decode(data[pos:end]))
        pos = end
    return out


class Channel:
    """One endpoint of a two-endpoint FIFO byte-frame channel.

    In-memory implementation over queues; frames cross as the exact bytes
    encode() produced, so this transport is bit-identical to a pipe.
    """

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, state: dict):
        self._inbox = inbox
        self._outbox = outbox
        self._state = state

    def send(self, msg: WireMessage):
        if self._state["closed"]:
            raise ChannelClosed("channel is closed")
        self._outbox.put(encode(msg))

    def recv(self, timeout: float = DEFAULT_TIMEOUT) -> WireMessage:
        if self._state["closed"] and self._inbox.empty():
            raise ChannelClosed("channel is closed")
        try:
            frame = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise RecvTimeout(f"no frame within {timeout} s") from None
        if frame is None:
            raise ChannelClosed("peer closed the channel")
        return decode(frame)

    def close(self):
        if not self._state["closed"]:
            self._state["closed"] = True
            self._outbox.put(None)


def make_channel_pair() -> tuple[Channel, Channel]:
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    state = {"closed": False}
    return Channel(b_to_a, a_to_b, state), Channel(a_to_b, b_to_a, state)


def channel_send(ch: Channel, msg: WireMessage):
    ch.send(msg)


def channel_recv(ch: Channel, timeout: float = DEFAULT_TIMEOUT) -> WireMessage:
    return ch.recv(timeout=timeout)


class ReplayCache:
    """External inputs the master read, replayed to the twin in order."""

    def __init__(self):
        self._recorded: dict[int, list[bytes]] = {}
        self._consumed: dict[int, int] = {}

    def record(self, builtin_id: int, value: bytes):
        self._recorded.setdefault(builtin_id, []).append(value)

    def replay(self, builtin_id: int) -> bytes:
        seen = self._consumed.get(builtin_id, 0)
        values = self._recorded.get(builtin_id, [])
        if seen >= len(values):
            raise ReplayUnderflow(
                f"builtin {builtin_id}: replay {seen + 1} requested,"
                f" only {len(values)} recorded"
            )
        self._consumed[builtin_id] = seen + 1
        return values[seen]

    def record_count(self) -> int:
        return sum(len(v) for v in self._recorded.values())


def record(cache: ReplayCache, builtin_id: int, value: bytes):
    cache.record(builtin_id, value)


def replay(cache: ReplayCache, builtin_id: int) -> bytes:
    return cache.replay(builtin_id)
