"""Shared test plumbing: corpus paths and one-call dual sessions."""

from pathlib import Path

from twinscript.aslr import DEFAULT_CATALOGUE
from twinscript.bytecode import compile_source
from twinscript.supervisor import EntropyRegistry, spawn_dual
from twinscript.vm import run_solo, vm_create
from twinscript import aslr

REPO = Path(__file__).resolve().parent.parent
CORPUS = REPO / "corpus"
EXPLOITS = CORPUS / "exploits"
BENIGN = CORPUS / "benign"
RESOURCES = CORPUS / "resources"
MANIFEST = CORPUS / "manifest.txt"
BENCH_MANIFEST = CORPUS / "bench_manifest.txt"


def dual_run(
    source,
    seeds=(1, 2),
    mode="enforce",
    registry=None,
    resources=None,
    transport="inproc",
    timeout=10.0,
):
    program = compile_source(source)
    reg = registry if registry is not None else EntropyRegistry.default()
    session = spawn_dual(
        program,
        DEFAULT_CATALOGUE,
        seeds,
        reg,
        mode=mode,
        transport=transport,
        resources=resources,
        timeout=timeout,
        source=source,
    )
    return session.run(), session


def solo_events(source, seed=1, build=aslr.build_master, master_space=None, resources=None):
    """Run one VM to completion; returns (events, vm)."""
    program = compile_source(source)
    if master_space is None:
        space = build(DEFAULT_CATALOGUE, seed)
    else:
        space = aslr.build_twin(master_space, DEFAULT_CATALOGUE, seed)
    vm = vm_create(program, space, seed, resources=resources)
    return run_solo(vm), vm


def master_twin_solo(source, seed_m=1, seed_t=2, resources=None):
    """Independent solo runs of the same source over master/twin spaces."""
    program = compile_source(source)
    ms = aslr.build_master(DEFAULT_CATALOGUE, seed_m)
    ts = aslr.build_twin(ms, DEFAULT_CATALOGUE, seed_t)
    mvm = vm_create(program, ms, seed_m, resources=resources, proc_id=101)
    tvm = vm_create(program, ts, seed_t, resources=None, proc_id=102)
    return run_solo(mvm), run_solo(tvm), mvm, tvm
