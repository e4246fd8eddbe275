import random

import pytest

from twinscript import aslr
from twinscript.aslr import (
    DEFAULT_CATALOGUE,
    AddressSpace,
    CatalogueError,
    Mapping,
    ModuleSpec,
    PlacementError,
    build_master,
    build_twin,
    load_catalogue,
    module_of,
    relocate,
    save_catalogue,
    validate_catalogue,
)

SMALL = (
    ModuleSpec("nt", 0x100000, 0x77000000, pinned=True),
    ModuleSpec("engine", 0x200000, 0x10000000),
)


def assert_disjoint(space):
    extents = sorted(space.extents())
    for (b1, s1), (b2, s2) in zip(extents, extents[1:]):
        assert b1 + s1 <= b2, f"overlap: {b1:#x}+{s1:#x} vs {b2:#x}"


def test_preferred_bases_honoured_when_free():
    space = build_master(SMALL, seed=1)
    assert space.module("nt").base == 0x77000000
    assert space.module("engine").base == 0x10000000
    assert_disjoint(space)


def test_conflicting_preferred_base_relocates_second():
    cat = (
        ModuleSpec("nt", 0x100000, 0x77000000, pinned=True),
        ModuleSpec("one", 0x100000, 0x30000000),
        ModuleSpec("two", 0x100000, 0x30000000),
    )
    space = build_master(cat, seed=5)
    assert space.module("one").base == 0x30000000
    assert space.module("two").base != 0x30000000
    assert space.module("two").base % aslr.PAGE == 0
    assert_disjoint(space)


def test_heap_base_distribution_spreads():
    bases = {build_master(SMALL, seed=s).heap_base for s in range(1000)}
    assert len(bases) >= 100


def test_twin_moves_every_relocatable_base():
    master = build_master(DEFAULT_CATALOGUE, seed=3)
    twin = build_twin(master, DEFAULT_CATALOGUE, seed=4)
    assert twin.module("engine").base != master.module("engine").base
    assert twin.module("gfx").base != master.module("gfx").base
    assert twin.module("net").base != master.module("net").base
    assert twin.heap_base != master.heap_base
    assert twin.stack_base != master.stack_base
    assert_disjoint(twin)


def test_pinned_module_identical_in_both():
    master = build_master(DEFAULT_CATALOGUE, seed=3)
    twin = build_twin(master, DEFAULT_CATALOGUE, seed=4)
    assert twin.module("nt").base == master.module("nt").base == 0x77000000


def test_twin_reserves_master_bases():
    master = build_master(DEFAULT_CATALOGUE, seed=9)
    twin = build_twin(master, DEFAULT_CATALOGUE, seed=10)
    reserved = set(twin.reservations)
    for m in master.mappings:
        if m.name != "nt":
            assert (m.base, aslr.PAGE) in reserved
    assert (master.heap_base, aslr.PAGE) in reserved
    assert (master.stack_base, aslr.PAGE) in reserved


def test_builds_are_pure_functions_of_seed():
    a = build_master(DEFAULT_CATALOGUE, seed=42)
    b = build_master(DEFAULT_CATALOGUE, seed=42)
    assert a == b
    ta = build_twin(a, DEFAULT_CATALOGUE, seed=43)
    tb = build_twin(b, DEFAULT_CATALOGUE, seed=43)
    assert ta == tb


def test_relocate_lands_in_range_on_empty_space():
    space = AddressSpace()
    rng = random.Random(0)
    base = relocate(space, ModuleSpec("m", 0x10000, 0x20000000), rng)
    assert aslr.SPACE_LO <= base
    assert base + 0x10000 <= aslr.SPACE_HI
    assert base % aslr.PAGE == 0


def test_relocate_finds_the_single_free_page():
    hole = 0x40000000
    space = AddressSpace(
        mappings=[
            Mapping("low", aslr.SPACE_LO, hole - aslr.SPACE_LO),
            Mapping("high", hole + aslr.PAGE, aslr.SPACE_HI - hole - aslr.PAGE),
        ]
    )
    rng = random.Random(0)
    base = relocate(space, ModuleSpec("m", aslr.PAGE, 0x20000000), rng)
    assert base == hole


def test_relocate_exhaustion_on_full_space():
    space = AddressSpace(
        mappings=[Mapping("all", aslr.SPACE_LO, aslr.SPACE_HI - aslr.SPACE_LO)]
    )
    rng = random.Random(0)
    with pytest.raises(PlacementError):
        relocate(space, ModuleSpec("m", aslr.PAGE, 0x20000000), rng)


def test_module_of_attribution():
    space = build_master(DEFAULT_CATALOGUE, seed=1)
    engine = space.module("engine")
    assert module_of(space, engine.base + 0x10) == "engine"
    assert module_of(space, 0x00000004) == "unmapped"
    assert module_of(space, space.heap_base + 0x100) == "heap"
    assert module_of(space, space.stack_base) == "stack"
    assert module_of(space, engine.base + engine.size) != "engine"


def test_leak_attribution_agreement_between_processes():
    master = build_master(DEFAULT_CATALOGUE, seed=1)
    twin = build_twin(master, DEFAULT_CATALOGUE, seed=2)
    m_word = master.module("engine").base + 0x10
    t_word = twin.module("engine").base + 0x10
    assert module_of(master, m_word) == "engine"
    assert module_of(twin, t_word) == "engine"


def test_catalogue_requires_exactly_one_pinned():
    with pytest.raises(CatalogueError):
        validate_catalogue([ModuleSpec("a", 0x1000, 0x20000000)])
    with pytest.raises(CatalogueError):
        validate_catalogue(
            [
                ModuleSpec("a", 0x1000, 0x20000000, pinned=True),
                ModuleSpec("b", 0x1000, 0x30000000, pinned=True),
            ]
        )


def test_catalogue_rejects_bad_sizes():
    with pytest.raises(CatalogueError):
        validate_catalogue([ModuleSpec("a", 0x800, 0x20000000, pinned=True)])
    with pytest.raises(CatalogueError):
        validate_catalogue([ModuleSpec("a", 0x1234, 0x20000000, pinned=True)])


def test_catalogue_file_roundtrip(tmp_path):
    path = tmp_path / "cat.txt"
    save_catalogue(DEFAULT_CATALOGUE, path)
    assert load_catalogue(path) == DEFAULT_CATALOGUE


def test_catalogue_file_errors(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("nt zz 0x77000000 pinned\n")
    with pytest.raises(CatalogueError):
        load_catalogue(path)
    path.write_text("nt 0x100000 0x77000000 sticky\n")
    with pytest.raises(CatalogueError):
        load_catalogue(path)


def test_disjointness_over_many_builds():
    for seed in range(50):
        master = build_master(DEFAULT_CATALOGUE, seed)
        twin = build_twin(master, DEFAULT_CATALOGUE, seed + 1000)
        assert_disjoint(master)
        assert_disjoint(twin)


def test_space_dict_roundtrip():
    space = build_master(DEFAULT_CATALOGUE, 7)
    assert AddressSpace.from_dict(space.to_dict()) == space
