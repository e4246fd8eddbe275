"""Simulated 32-bit per-process address space construction.

A master space places each catalogue module at its preferred base when
free, relocating on conflict. The twin space reserves a guard page at
every base the master ended up with (modules, heap, stack), which forces
the same placement policy to land everything somewhere else. Exactly one
catalogue module is pinned: it maps at its preferred base in both
processes and is the documented blind spot of the whole scheme.

All construction is a pure function of (catalogue, seed[, master]).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

PAGE = 0x1000
SPACE_LO = 0x00010000
SPACE_HI = 0x7FFF0000
HEAP_ALIGN = 0x10000
HEAP_REGION_SIZE = 0x01000000
STACK_REGION_SIZE = 0x00100000
MAX_PROBES = 4096


class CatalogueError(Exception):
    pass


class PlacementError(Exception):
    """No admissible base found within the probe budget."""


@dataclass(frozen=True)
class ModuleSpec:
    name: str
    size: int
    preferred_base: int
    pinned: bool = False


@dataclass(frozen=True)
class Mapping:
    name: str
    base: int
    size: int


@dataclass
class AddressSpace:
    mappings: list[Mapping] = field(default_factory=list)
    reservations: list[tuple[int, int]] = field(default_factory=list)
    heap_base: int = 0
    stack_base: int = 0
    rng_seed: int = 0

    def extents(self) -> list[tuple[int, int]]:
        """All occupied (base, size) ranges: mappings, reservations, heap, stack."""
        out = [(m.base, m.size) for m in self.mappings]
        out += list(self.reservations)
        if self.heap_base:
            out.append((self.heap_base, HEAP_REGION_SIZE))
        if self.stack_base:
            out.append((self.stack_base, STACK_REGION_SIZE))
        return out

    def module(self, name: str) -> Mapping:
        for m in self.mappings:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "mappings": [[m.name, m.base, m.size] for m in self.mappings],
            "reservations": [list(r) for r in self.reservations],
            "heap_base": self.heap_base,
            "stack_base": self.stack_base,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AddressSpace":
        return cls(
            mappings=[Mapping(n, b, s) for n, b, s in d["mappings"]],
            reservations=[tuple(r) for r in d["reservations"]],
            heap_base=d["heap_base"],
            stack_base=d["stack_base"],
            rng_seed=d["rng_seed"],
        )


DEFAULT_CATALOGUE: tuple[ModuleSpec, ...] = (
    ModuleSpec("nt", 0x00180000, 0x77000000, pinned=True),
    ModuleSpec("engine", 0x00200000, 0x10000000),
    ModuleSpec("gfx", 0x00100000, 0x20000000),
    ModuleSpec("net", 0x00080000, 0x28000000),
)


def validate_catalogue(catalogue: list[ModuleSpec] | tuple[ModuleSpec, ...]):
    if not catalogue:
        raise CatalogueError("empty module catalogue")
    pinned = [m for m in catalogue if m.pinned]
    if len(pinned) != 1:
        raise CatalogueError(f"exactly one pinned module required, got {len(pinned)}")
    names = [m.name for m in catalogue]
    if len(set(names)) != len(names):
        raise CatalogueError("duplicate module names")
    for m in catalogue:
        if m.size < PAGE or m.size % PAGE:
            raise CatalogueError(f"module {m.name}: size must be a multiple of 0x1000")
        if m.preferred_base % PAGE:
            raise CatalogueError(f"module {m.name}: preferred base not page aligned")
        if not (SPACE_LO <= m.preferred_base and m.preferred_base + m.size <= SPACE_HI):
            raise CatalogueError(f"module {m.name}: preferred range out of bounds")


def _overlaps(base: int, size: int, extents: list[tuple[int, int]]) -> bool:
    end = base + size
    for xb, xs in extents:
        if base < xb + xs and xb < end:
            return True
    return False


def _sweep(size: int, align: int, extents: list[tuple[int, int]]) -> int | None:
    """First aligned base that fits, scanning free gaps low to high."""
    cursor = SPACE_LO
    for xb, xs in sorted(extents):
        if cursor + size <= xb:
            return cursor
        cursor = max(cursor, xb + xs)
        cursor += (-cursor) % align
    if cursor + size <= SPACE_HI:
        return cursor
    return None


def _probe(size: int, align: int, extents: list[tuple[int, int]], rng: random.Random) -> int:
    span = (SPACE_HI - size - SPACE_LO) // align
    if span <= 0:
        raise PlacementError(f"no room for a region of size {size:#x}")
    for _ in range(MAX_PROBES):
        base = SPACE_LO + rng.randrange(span + 1) * align
        if base + size > SPACE_HI:
            continue
        if not _overlaps(base, size, extents):
            return base
    # Nearly-full spaces defeat rejection sampling; fall back to one
    # deterministic sweep so placement fails only when nothing fits.
    base = _sweep(size, align, extents)
    if base is not None:
        return base
    raise PlacementError(
        f"no admissible base for size {size:#x} after {MAX_PROBES} probes"
    )


def relocate(space: AddressSpace, spec: ModuleSpec, rng: random.Random) -> int:
    """Pick a random page-aligned base that fits, rejection sampling."""
    return _probe(spec.size, PAGE, space.extents(), rng)


def _place_modules(
    space: AddressSpace, catalogue: tuple[ModuleSpec, ...], rng: random.Random
):
    for spec in catalogue:
        if spec.pinned:
            if _overlaps(spec.preferred_base, spec.size, space.extents()):
                raise PlacementError(f"pinned module {spec.name} base is occupied")
            space.mappings.append(Mapping(spec.name, spec.preferred_base, spec.size))
    for spec in catalogue:
        if spec.pinned:
            continue
        if not _overlaps(spec.preferred_base, spec.size, space.extents()):
            base = spec.preferred_base
        else:
            base = relocate(space, spec, rng)
        space.mappings.append(Mapping(spec.name, base, spec.size))


def _place_heap_stack(space: AddressSpace, rng: random.Random):
    space.heap_base = _probe(HEAP_REGION_SIZE, HEAP_ALIGN, space.extents(), rng)
    space.stack_base = _probe(STACK_REGION_SIZE, HEAP_ALIGN, space.extents(), rng)


def build_master(catalogue, seed: int) -> AddressSpace:
    catalogue = tuple(catalogue)
    validate_catalogue(catalogue)
    rng = random.Random(seed)
    space = AddressSpace(rng_seed=seed)
    _place_modules(space, catalogue, rng)
    _place_heap_stack(space, rng)
    return space


def build_twin(master: AddressSpace, catalogue, seed: int) -> AddressSpace:
    """Build the re-randomized clone: reserve the master's bases first."""
    catalogue = tuple(catalogue)
    validate_catalogue(catalogue)
    pinned_names = {m.name for m in catalogue if m.pinned}
    rng = random.Random(seed)
    space = AddressSpace(rng_seed=seed)
    for m in master.mappings:
        if m.name not in pinned_names:
            space.reservations.append((m.base, PAGE))
    space.reservations.append((master.heap_base, PAGE))
    space.reservations.append((master.stack_base, PAGE))
    _place_modules(space, catalogue, rng)
    _place_heap_stack(space, rng)
    return space


def module_of(space: AddressSpace, addr: int) -> str:
    """Attribute an address: a module name, "heap", "stack" or "unmapped"."""
    for m in space.mappings:
        if m.base <= addr < m.base + m.size:
            return m.name
    if space.heap_base <= addr < space.heap_base + HEAP_REGION_SIZE:
        return "heap"
    if space.stack_base <= addr < space.stack_base + STACK_REGION_SIZE:
        return "stack"
    return "unmapped"


def is_mapped(space: AddressSpace, addr: int) -> bool:
    return module_of(space, addr) != "unmapped"


def load_catalogue(path) -> tuple[ModuleSpec, ...]:
    """Parse a catalogue file: `name size_hex preferred_hex [pinned]` per line."""
    specs: list[ModuleSpec] = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (3, 4):
                raise CatalogueError(f"{path}:{ln}: expected 3 or 4 fields")
            name, size_s, pref_s = parts[:3]
            pinned = False
            if len(parts) == 4:
                if parts[3] != "pinned":
                    raise CatalogueError(f"{path}:{ln}: unknown flag {parts[3]!r}")
                pinned = True
            try:
                size = int(size_s, 16)
                pref = int(pref_s, 16)
            except ValueError as e:
                raise CatalogueError(f"{path}:{ln}: bad hex field: {e}") from None
            specs.append(ModuleSpec(name, size, pref, pinned))
    validate_catalogue(specs)
    return tuple(specs)


def save_catalogue(catalogue, path):
    with open(path, "w", encoding="utf-8") as fh:
        for m in catalogue:
            flag = " pinned" if m.pinned else ""
            fh.write(f"{m.name} {m.size:#x} {m.preferred_base:#x}{flag}\n")
