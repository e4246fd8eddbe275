"""Script values and their canonical byte encoding.

Script values are plain Python natives plus small handle wrappers. Handles
are per-process indexes and never appear in the canonical form: containers
encode by content, so two processes agree on the bytes exactly when the
script-visible data agrees. A leaked address is just a Number whose bytes
differ between differently randomized processes.

Canonical layout (all integers little-endian):
  00                         null
  01 byte                    bool
  02 f64                     number (NaN normalized to one bit pattern)
  03 u32 len, utf-8          string
  04 u32 count, elements     array (recursive)
  05 u32 count, fields       object; fields sorted bytewise by name,
                             each as u32 name-len, name utf-8, value
  06 u32 index               function reference (an index, not an address)
  07 u32 count, u32 words    int array: true length plus raw words
  08                         elided (emitted past the recursion depth limit)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

from .bytecode import FuncRef

TAG_NULL = 0
TAG_BOOL = 1
TAG_NUMBER = 2
TAG_STR = 3
TAG_ARRAY = 4
TAG_OBJECT = 5
TAG_FUNC = 6
TAG_INT_ARRAY = 7
TAG_ELIDED = 8

DEFAULT_DEPTH_LIMIT = 8

_NAN_BYTES = b"\x00\x00\x00\x00\x00\x00\xf8\x7f"


@dataclass(frozen=True)
class ArrayRef:
    handle: int


@dataclass(frozen=True)
class ObjectRef:
    handle: int


@dataclass(frozen=True)
class IntArrayRef:
    handle: int


class ValueResolver(Protocol):
    """Supplies container contents for canonicalization (the VM)."""

    def array_items(self, handle: int) -> list: ...

    def object_fields(self, handle: int) -> dict: ...

    def int_array_words(self, handle: int) -> list[int]: ...


class CanonicalError(Exception):
    pass


def _u32(n: int) -> bytes:
    return struct.pack("<I", n)


def canonicalize(
    value, resolver: ValueResolver | None = None, depth: int = DEFAULT_DEPTH_LIMIT
) -> bytes:
    """Encode a script value. Total on cyclic structures via depth elision."""
    if depth <= 0:
        return bytes([TAG_ELIDED])
    if value is None:
        return bytes([TAG_NULL])
    if isinstance(value, bool):
        return bytes([TAG_BOOL, 1 if value else 0])
    if isinstance(value, (float, int)):
        v = float(value)
        if v != v:
            return bytes([TAG_NUMBER]) + _NAN_BYTES
        return bytes([TAG_NUMBER]) + struct.pack("<d", v)
    if isinstance(value, str):
        raw = value.encode("utf-8")
        return bytes([TAG_STR]) + _u32(len(raw)) + raw
    if isinstance(value, FuncRef):
        return bytes([TAG_FUNC]) + _u32(value.index)
    if isinstance(value, ArrayRef):
        if resolver is None:
            raise CanonicalError("array value needs a resolver")
        items = resolver.array_items(value.handle)
        out = [bytes([TAG_ARRAY]), _u32(len(items))]
        out += [canonicalize(item, resolver, depth - 1) for item in items]
        return b"".join(out)
    if isinstance(value, ObjectRef):
        if resolver is None:
            raise CanonicalError("object value needs a resolver")
        fields = resolver.object_fields(value.handle)
        names = sorted(fields, key=lambda n: n.encode("utf-8"))
        out = [bytes([TAG_OBJECT]), _u32(len(names))]
        for name in names:
            raw = name.encode("utf-8")
            out.append(_u32(len(raw)) + raw)
            out.append(canonicalize(fields[name], resolver, depth - 1))
        return b"".join(out)
    if isinstance(value, IntArrayRef):
        if resolver is None:
            raise CanonicalError("int array value needs a resolver")
        words = resolver.int_array_words(value.handle)
        return (
            bytes([TAG_INT_ARRAY])
            + _u32(len(words))
            + b"".join(_u32(w & 0xFFFFFFFF) for w in words)
        )
    raise CanonicalError(f"not a script value: {value!r}")


class Elided:
    """Marker for values dropped by the depth limit."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "<elided>"


ELIDED = Elided()


@dataclass(frozen=True)
class DecodedIntArray:
    words: tuple[int, ...]

    def __repr__(self):
        return f"int-array{list(self.words)!r}"


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CanonicalError("truncated canonical value")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def _decode_one(r: _Reader, leaves: list | None, depth_guard: int = 64):
    if depth_guard <= 0:
        raise CanonicalError("canonical value nested too deep")
    start = r.pos
    tag = r.take(1)[0]
    if tag == TAG_NULL:
        value = None
    elif tag == TAG_BOOL:
        b = r.take(1)[0]
        if b not in (0, 1):
            raise CanonicalError("bad bool byte")
        value = bool(b)
    elif tag == TAG_NUMBER:
        value = struct.unpack("<d", r.take(8))[0]
    elif tag == TAG_STR:
        n = r.u32()
        if n > len(r.blob) - r.pos:
            raise CanonicalError("string length overruns blob")
        value = r.take(n).decode("utf-8")
    elif tag == TAG_ARRAY:
        n = r.u32()
        if n > len(r.blob) - r.pos:
            raise CanonicalError("array count overruns blob")
        value = [_decode_one(r, leaves, depth_guard - 1) for _ in range(n)]
        return value  # container: leaves recorded by elements
    elif tag == TAG_OBJECT:
        n = r.u32()
        if n > len(r.blob) - r.pos:
            raise CanonicalError("field count overruns blob")
        obj = {}
        for _ in range(n):
            ln = r.u32()
            if ln > len(r.blob) - r.pos:
                raise CanonicalError("field name overruns blob")
            name = r.take(ln).decode("utf-8")
            obj[name] = _decode_one(r, leaves, depth_guard - 1)
        return obj
    elif tag == TAG_FUNC:
        value = FuncRef(r.u32())
    elif tag == TAG_INT_ARRAY:
        n = r.u32()
        if n * 4 > len(r.blob) - r.pos:
            raise CanonicalError("word count overruns blob")
        words = []
        for _ in range(n):
            wstart = r.pos
            w = r.u32()
            words.append(w)
            if leaves is not None:
                leaves.append((wstart, r.pos, float(w)))
        return DecodedIntArray(tuple(words))
    elif tag == TAG_ELIDED:
        value = ELIDED
    else:
        raise CanonicalError(f"unknown canonical tag {tag}")
    if leaves is not None:
        leaves.append((start, r.pos, value))
    return value


def canonical_decode(blob: bytes):
    """Inverse of canonicalize, into plain Python structures."""
    r = _Reader(blob)
    value = _decode_one(r, None)
    if r.pos != len(blob):
        raise CanonicalError("trailing bytes after canonical value")
    return value


def canonical_leaves(blob: bytes) -> list[tuple[int, int, object]]:
    """(start, end, value) spans of every atom, int-array word level."""
    r = _Reader(blob)
    leaves: list[tuple[int, int, object]] = []
    _decode_one(r, leaves)
    if r.pos != len(blob):
        raise CanonicalError("trailing bytes after canonical value")
    return leaves


def first_divergence(a: bytes, b: bytes) -> tuple[int, object, object] | None:
    """First differing byte offset and the atoms covering it on each side.

    Returns None when the blobs are equal. When the offset falls outside
    any atom span (container headers), the atom slots are None.
    """
    limit = min(len(a), len(b))
    offset = None
    for i in range(limit):
        if a[i] != b[i]:
            offset = i
            break
    if offset is None:
        if len(a) == len(b):
            return None
        offset = limit

    def atom_at(blob: bytes, off: int):
        try:
            for start, end, value in canonical_leaves(blob):
                if start <= off < end:
                    return value
        except CanonicalError:
            return None
        return None

    return offset, atom_at(a, offset), atom_at(b, offset)


def display(value, resolver: ValueResolver | None = None, depth: int = 6) -> str:
    """Human-readable rendering used by print and reports."""
    if depth <= 0:
        return "..."
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, int)):
        return format_number(float(value))
    if isinstance(value, str):
        return value
    if isinstance(value, FuncRef):
        return f"<fn {value.index}>"
    if isinstance(value, ArrayRef) and resolver is not None:
        items = resolver.array_items(value.handle)
        return "[" + ", ".join(display(v, resolver, depth - 1) for v in items) + "]"
    if isinstance(value, ObjectRef) and resolver is not None:
        fields = resolver.object_fields(value.handle)
        inner = ", ".join(
            f"{k}: {display(v, resolver, depth - 1)}" for k, v in sorted(fields.items())
        )
        return "{" + inner + "}"
    if isinstance(value, IntArrayRef) and resolver is not None:
        words = resolver.int_array_words(value.handle)
        return "int-array[" + ", ".join(str(w) for w in words) + "]"
    return repr(value)


def format_number(v: float) -> str:
    if v != v:
        return "NaN"
    if v == int(v) and abs(v) < 2**53:
        return str(int(v))
    return repr(v)
