"""Simulated process heap: a sparse 32-bit word store with a bump cursor.

The backing store reads as zero until written, so uninitialized reads are
reproducible. Freeing the most recent allocation rewinds the cursor
without scrubbing, which is what makes stale-word reuse (and therefore the
uninitialized-field vulnerability) expressible without a real allocator.

Words that hold address-derived data (object headers) are tagged in a
taint set. The tags never influence execution; they exist so tests can
check that cross-process divergence only ever originates from such words
or from entropy sources.
"""

from __future__ import annotations

from dataclasses import dataclass, field

ALIGN = 16
WORD = 4


class HeapError(Exception):
    pass


@dataclass
class Allocation:
    addr: int
    size: int
    kind: str
    freed: bool = False


@dataclass
class SimHeap:
    base: int
    limit: int
    cursor: int = 0
    words: dict[int, int] = field(default_factory=dict)
    log: list[Allocation] = field(default_factory=list)
    free_blocks: dict[int, int] = field(default_factory=dict)  # addr -> size
    tainted: set[int] = field(default_factory=set)

    def __post_init__(self):
        if self.cursor == 0:
            self.cursor = self.base

    def alloc(self, nbytes: int, kind: str) -> int:
        size = nbytes + (-nbytes) % ALIGN
        addr = None
        for cand in sorted(self.free_blocks):
            if self.free_blocks[cand] == size:
                addr = cand
                del self.free_blocks[cand]
                break
        if addr is None:
            if self.cursor + size > self.limit:
                raise HeapError("heap region exhausted")
            addr = self.cursor
            self.cursor += size
        self.log.append(Allocation(addr, size, kind))
        return addr

    def free(self, addr: int):
        alloc = self._live_at(addr)
        alloc.freed = True
        if addr + alloc.size == self.cursor:
            self.cursor = addr
            # absorb any earlier freed blocks now sitting at the tail
            changed = True
            while changed:
                changed = False
                for cand, size in list(self.free_blocks.items()):
                    if cand + size == self.cursor:
                        del self.free_blocks[cand]
                        self.cursor = cand
                        changed = True
        else:
            self.free_blocks[addr] = alloc.size

    def _live_at(self, addr: int) -> Allocation:
        for alloc in reversed(self.log):
            if alloc.addr == addr and not alloc.freed:
                return alloc
        raise HeapError(f"no live allocation at {addr:#010x}")

    def store(self, addr: int, word: int):
        self.words[addr] = word & 0xFFFFFFFF

    def load(self, addr: int) -> int:
        return self.words.get(addr, 0)

    def mark_tainted(self, addr: int):
        self.tainted.add(addr)

    def is_tainted(self, addr: int) -> bool:
        return addr in self.tainted

    def live_allocations(self) -> list[Allocation]:
        return [a for a in self.log if not a.freed]
