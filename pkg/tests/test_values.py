import math
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinscript.bytecode import FuncRef
from twinscript.values import (
    ELIDED,
    ArrayRef,
    CanonicalError,
    DecodedIntArray,
    IntArrayRef,
    ObjectRef,
    canonical_decode,
    canonical_leaves,
    canonicalize,
    first_divergence,
)


class FakeResolver:
    def __init__(self, arrays=(), objects=(), int_arrays=()):
        self.arrays = list(arrays)
        self.objects = list(objects)
        self.int_arrays = list(int_arrays)

    def array_items(self, handle):
        return self.arrays[handle]

    def object_fields(self, handle):
        return self.objects[handle]

    def int_array_words(self, handle):
        return self.int_arrays[handle]


def test_number_one_canonical_bytes():
    assert canonicalize(1.0) == bytes.fromhex("02 0000000000 00f03f".replace(" ", ""))


def test_scalar_tags():
    assert canonicalize(None) == b"\x00"
    assert canonicalize(True) == b"\x01\x01"
    assert canonicalize(False) == b"\x01\x00"
    assert canonicalize("ab") == b"\x03\x02\x00\x00\x00ab"
    assert canonicalize(FuncRef(3)) == b"\x06\x03\x00\x00\x00"


def test_nan_is_normalized_to_one_pattern():
    a = canonicalize(float("nan"))
    b = canonicalize(struct.unpack("<d", b"\x01\x00\x00\x00\x00\x00\xf8\x7f")[0])
    assert a == b


def test_array_and_object_encoding():
    r = FakeResolver(arrays=[[1.0, "x"]], objects=[{"b": 2.0, "a": 1.0}])
    arr = canonicalize(ArrayRef(0), r)
    assert arr[0] == 4
    assert arr[1:5] == b"\x02\x00\x00\x00"
    obj = canonicalize(ObjectRef(0), r)
    # fields sorted bytewise by name: a before b
    assert obj.index(b"a") < obj.index(b"b")
    decoded = canonical_decode(obj)
    assert decoded == {"a": 1.0, "b": 2.0}


def test_int_array_uses_true_length_and_raw_words():
    r = FakeResolver(int_arrays=[[7, 0x10000010]])
    blob = canonicalize(IntArrayRef(0), r)
    assert blob == b"\x07\x02\x00\x00\x00" + struct.pack("<II", 7, 0x10000010)
    assert canonical_decode(blob) == DecodedIntArray((7, 0x10000010))


def test_depth_limit_elides():
    nested = [[[[1.0]]]]
    r = FakeResolver(arrays=[[ArrayRef(1)], [ArrayRef(2)], [ArrayRef(3)], [1.0]])
    full = canonicalize(ArrayRef(0), r, depth=8)
    clipped = canonicalize(ArrayRef(0), r, depth=2)
    assert b"\x08" in clipped
    assert b"\x08" not in full
    decoded = canonical_decode(clipped)
    assert decoded[0][0] is ELIDED


def test_cyclic_structure_terminates():
    r = FakeResolver(arrays=[[None]])
    r.arrays[0][0] = ArrayRef(0)
    blob = canonicalize(ArrayRef(0), r)
    assert blob.endswith(b"\x08")


def test_funcref_canonical_is_process_independent():
    assert canonicalize(FuncRef(2)) == canonicalize(FuncRef(2))


def test_decode_rejects_trailing_bytes():
    blob = canonicalize(1.0) + b"\x00"
    with pytest.raises(CanonicalError):
        canonical_decode(blob)


def test_decode_rejects_truncation_and_bad_tags():
    with pytest.raises(CanonicalError):
        canonical_decode(b"\x02\x00")
    with pytest.raises(CanonicalError):
        canonical_decode(b"\x2a")


def test_first_divergence_pinpoints_the_word():
    r1 = FakeResolver(int_arrays=[[0, 0x10000010, 5]])
    r2 = FakeResolver(int_arrays=[[0, 0x7A530010, 5]])
    a = canonicalize(IntArrayRef(0), r1)
    b = canonicalize(IntArrayRef(0), r2)
    offset, leaf_a, leaf_b = first_divergence(a, b)
    # tag(1) + count(4) + word0(4) puts word1 at offset 9..13
    assert 9 <= offset < 13
    assert leaf_a == float(0x10000010)
    assert leaf_b == float(0x7A530010)


def test_first_divergence_none_when_equal():
    assert first_divergence(canonicalize(2.5), canonicalize(2.5)) is None


def test_first_divergence_inside_object_field():
    r1 = FakeResolver(objects=[{"index": float(0x20000020), "k": 1.0}])
    r2 = FakeResolver(objects=[{"index": float(0x55550020), "k": 1.0}])
    a = canonicalize(ObjectRef(0), r1)
    b = canonicalize(ObjectRef(0), r2)
    offset, leaf_a, leaf_b = first_divergence(a, b)
    assert leaf_a == float(0x20000020)
    assert leaf_b == float(0x55550020)


scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.floats(allow_infinity=False, width=64),
    st.text(max_size=12),
    st.builds(FuncRef, st.integers(0, 2**32 - 1)),
)


@settings(max_examples=300, deadline=None)
@given(scalars)
def test_scalar_roundtrip(value):
    blob = canonicalize(value)
    back = canonical_decode(blob)
    if isinstance(value, float) and value != value:
        assert back != back
    else:
        assert back == value
        assert type(back) in (type(value), float)


@settings(max_examples=150, deadline=None)
@given(st.recursive(scalars, lambda kids: st.lists(kids, max_size=4), max_leaves=12))
def test_container_roundtrip(tree):
    arrays = []

    def build(node):
        if isinstance(node, list):
            items = [build(c) for c in node]
            arrays.append(items)
            return ArrayRef(len(arrays) - 1)
        return node

    root = build(tree)
    r = FakeResolver(arrays=arrays)
    blob = canonicalize(root, r, depth=16)
    leaves = canonical_leaves(blob)
    assert all(s < e for s, e, _ in leaves)
    canonical_decode(blob)
