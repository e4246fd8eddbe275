"""twinscript: dual-execution memory disclosure detection, desk scale.

A small script engine runs twice, as a master and a re-randomized twin,
in lockstep. Every value entering the script context is compared between
the two processes at bytecode checkpoints; a difference that is not a
registered entropy source is a memory disclosure.
"""

__version__ = "0.1.0"

from .aslr import AddressSpace, ModuleSpec, build_master, build_twin, module_of
from .bytecode import BytecodeProgram, CompileError, compile_ast, compile_source
from .lang import LexError, ParseError, parse, parse_source, tokenize
from .vm import (
    CheckpointEvent,
    Continue,
    EventKind,
    HaltNow,
    Overwrite,
    VmState,
    run_solo,
    vm_create,
)

__all__ = [
    "AddressSpace",
    "ModuleSpec",
    "build_master",
    "build_twin",
    "module_of",
    "BytecodeProgram",
    "CompileError",
    "compile_ast",
    "compile_source",
    "LexError",
    "ParseError",
    "parse",
    "parse_source",
    "tokenize",
    "CheckpointEvent",
    "Continue",
    "EventKind",
    "HaltNow",
    "Overwrite",
    "VmState",
    "run_solo",
    "vm_create",
    "__version__",
]
