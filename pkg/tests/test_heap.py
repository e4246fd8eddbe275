import pytest

from twinscript.heap import ALIGN, Allocation, HeapError, SimHeap


def make_heap(base=0x30000000, size=0x10000):
    return SimHeap(base=base, limit=base + size)


def test_bump_starts_at_base_and_aligns():
    h = make_heap()
    a = h.alloc(24, "int-array")
    b = h.alloc(1, "object")
    assert a == 0x30000000
    assert b == a + 32  # 24 rounds up to the next 16-byte boundary
    assert b % ALIGN == 0


def test_zero_backing_store():
    h = make_heap()
    a = h.alloc(16, "x")
    assert h.load(a + 8) == 0


def test_store_masks_to_32_bits():
    h = make_heap()
    a = h.alloc(16, "x")
    h.store(a, 0x1_2345_6789)
    assert h.load(a) == 0x2345_6789


def test_tail_free_rewinds_cursor_without_scrubbing():
    h = make_heap()
    a = h.alloc(16, "x")
    h.store(a + 8, 0xAAAA5555)
    h.free(a)
    assert h.cursor == a
    assert h.load(a + 8) == 0xAAAA5555  # stale data stays


def test_lifo_frees_cascade():
    h = make_heap()
    a = h.alloc(16, "x")
    b = h.alloc(16, "y")
    h.free(a)  # not the tail: parked
    h.free(b)  # tail: rewinds over both
    assert h.cursor == a
    assert h.free_blocks == {}


def test_non_tail_free_is_reused_on_exact_size():
    h = make_heap()
    a = h.alloc(32, "x")
    b = h.alloc(16, "y")
    h.free(a)
    c = h.alloc(32, "z")
    assert c == a
    assert h.alloc(16, "w") == h.cursor - 16  # bump continues past b


def test_double_free_rejected():
    h = make_heap()
    a = h.alloc(16, "x")
    h.free(a)
    with pytest.raises(HeapError):
        h.free(a)


def test_exhaustion():
    h = make_heap(size=64)
    h.alloc(32, "x")
    h.alloc(32, "y")
    with pytest.raises(HeapError):
        h.alloc(16, "z")


def test_allocation_log_records_everything():
    h = make_heap()
    a = h.alloc(16, "int-array")
    b = h.alloc(32, "option")
    h.free(a)
    kinds = [(x.kind, x.freed) for x in h.log]
    assert kinds == [("int-array", True), ("option", False)]
    assert [x.addr for x in h.live_allocations()] == [b]


def test_taint_marking():
    h = make_heap()
    a = h.alloc(16, "x")
    h.mark_tainted(a)
    assert h.is_tainted(a)
    assert not h.is_tainted(a + 4)
