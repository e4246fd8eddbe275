"""AST to bytecode compiler.

Compilation is eager and whole-program: same AST in, byte-identical
program out, in every process. All checkpoint-bearing opcodes (Call,
CallBuiltin, Return, ToNumber, ToString, Index, GetField, Output) carry
the SiteId assigned by the parser; synthetic sites are appended for
implicit returns so the site table stays total.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .lang import AstNode, NodeKind


class CompileError(Exception):
    pass


class Op(enum.IntEnum):
    LOAD_CONST = 0
    LOAD_LOCAL = 1
    STORE_LOCAL = 2
    ADD = 3
    SUB = 4
    MUL = 5
    DIV = 6
    MOD = 7
    EQ = 8
    LT = 9
    GT = 10
    NOT = 11
    JMP = 12
    JMP_IF_FALSE = 13
    CALL = 14
    CALL_BUILTIN = 15
    RETURN = 16
    NEW_ARRAY = 17
    NEW_OBJECT = 18
    NEW_INT_ARRAY = 19
    INDEX = 20
    INDEX_STORE = 21
    GET_FIELD = 22
    SET_FIELD = 23
    TO_NUMBER = 24
    TO_STRING = 25
    OUTPUT = 26
    HALT = 27


@dataclass(frozen=True)
class Instr:
    op: Op
    a: int = 0  # const index / slot / jump target / function or builtin id / count
    b: int = 0  # arg count / builtin id for conversions
    site: int = 0


@dataclass(frozen=True)
class FuncRef:
    """A function value: an index, never an address."""

    index: int


@dataclass
class FunctionCode:
    name: str
    param_count: int
    local_count: int
    code: list[Instr] = field(default_factory=list)


@dataclass
class BytecodeProgram:
    functions: list[FunctionCode]
    consts: list[object]
    builtins: tuple[str, ...]  # builtin id -> name
    sites: dict[int, tuple[int, int]]  # SiteId -> (line, col); 0 is synthetic

    def builtin_id(self, name: str) -> int:
        return self.builtins.index(name)

    def site_loc(self, site: int) -> tuple[int, int]:
        return self.sites.get(site, (0, 0))


# The builtin catalogue: (name, arity). Order fixes builtin ids.
# random/now/pid introduce per-process entropy; fetch reads external input;
# the last five are the deliberately vulnerable heap surface.
BUILTIN_CATALOGUE: tuple[tuple[str, int], ...] = (
    ("len", 1),
    ("abs", 1),
    ("floor", 1),
    ("parseInt", 1),
    ("charAt", 2),
    ("substr", 3),
    ("toNumber", 1),
    ("toString", 1),
    ("random", 0),
    ("now", 0),
    ("pid", 0),
    ("fetch", 1),
    ("print", 1),
    ("intArray", 1),
    ("setLengthUnsafe", 2),
    ("newOption", 0),
    ("corruptAndRead", 1),
    ("discard", 1),
    ("readIndex", 2),
)

_CONVERSION_BUILTINS = {"toNumber": Op.TO_NUMBER, "toString": Op.TO_STRING}


class _FnCompiler:
    def __init__(self, owner: "_Compiler", name: str, params: list[str]):
        self.owner = owner
        self.fc = FunctionCode(name=name, param_count=len(params), local_count=0)
        self.locals: dict[str, int] = {}
        for p in params:
            if p in self.locals:
                raise CompileError(f"duplicate parameter {p!r} in {name}")
            self.locals[p] = len(self.locals)
        self.scratch = self._new_slot("...scratch")

    def _new_slot(self, name: str) -> int:
        slot = len(self.locals)
        self.locals[name] = slot
        return slot

    def emit(self, op: Op, a: int = 0, b: int = 0, site: int = 0) -> int:
        self.fc.code.append(Instr(op, a, b, site))
        return len(self.fc.code) - 1

    def patch_jump(self, pos: int, target: int | None = None):
        instr = self.fc.code[pos]
        if target is None:
            target = len(self.fc.code)
        self.fc.code[pos] = Instr(instr.op, target, instr.b, instr.site)

    def compile_block(self, node: AstNode):
        for stmt in node.children:
            self.compile_statement(stmt)

    def compile_statement(self, node: AstNode):
        owner = self.owner
        if node.kind == NodeKind.VAR_DECL:
            self.compile_expr(node.children[0])
            name = node.value
            if name not in self.locals:
                self._new_slot(name)
            self.emit(Op.STORE_LOCAL, self.locals[name])
            return
        if node.kind == NodeKind.ASSIGN:
            target, value = node.children
            if target.kind == NodeKind.IDENTIFIER:
                if target.value not in self.locals:
                    raise CompileError(
                        f"assignment to undeclared variable {target.value!r}"
                        f" at {target.line}:{target.col}"
                    )
                self.compile_expr(value)
                self.emit(Op.STORE_LOCAL, self.locals[target.value])
                return
            if target.kind == NodeKind.INDEX:
                self.compile_expr(target.children[0])
                self.compile_expr(target.children[1])
                self.compile_expr(value)
                self.emit(Op.INDEX_STORE, site=target.site)
                return
            # field store
            self.compile_expr(target.children[0])
            self.compile_expr(value)
            self.emit(Op.SET_FIELD, owner.const_index(target.value), site=target.site)
            return
        if node.kind == NodeKind.IF:
            cond = node.children[0]
            self.compile_expr(cond)
            jf = self.emit(Op.JMP_IF_FALSE)
            self.compile_block(node.children[1])
            if len(node.children) == 3:
                jend = self.emit(Op.JMP)
                self.patch_jump(jf)
                alt = node.children[2]
                if alt.kind == NodeKind.BLOCK:
                    self.compile_block(alt)
                else:
                    self.compile_statement(alt)  # else-if chain
                self.patch_jump(jend)
            else:
                self.patch_jump(jf)
            return
        if node.kind == NodeKind.WHILE:
            top = len(self.fc.code)
            self.compile_expr(node.children[0])
            jf = self.emit(Op.JMP_IF_FALSE)
            self.compile_block(node.children[1])
            self.emit(Op.JMP, top)
            self.patch_jump(jf)
            return
        if node.kind == NodeKind.RETURN:
            if self.fc.name == "<main>":
                raise CompileError(
                    f"return outside a function at {node.line}:{node.col}"
                )
            if node.children:
                self.compile_expr(node.children[0])
            else:
                self.emit(Op.LOAD_CONST, self.owner.const_index(None))
            self.emit(Op.RETURN, site=self.owner.synthetic_site(node))
            return
        # expression statement: evaluate, park the value in the scratch slot
        self.compile_expr(node)
        self.emit(Op.STORE_LOCAL, self.scratch)

    def compile_expr(self, node: AstNode):
        owner = self.owner
        k = node.kind
        if k == NodeKind.LITERAL:
            self.emit(Op.LOAD_CONST, owner.const_index(node.value))
            return
        if k == NodeKind.IDENTIFIER:
            name = node.value
            if name in self.locals:
                self.emit(Op.LOAD_LOCAL, self.locals[name])
                return
            if name in owner.fn_indexes:
                self.emit(Op.LOAD_CONST, owner.const_index(FuncRef(owner.fn_indexes[name])))
                return
            raise CompileError(
                f"undeclared variable {name!r} at {node.line}:{node.col}"
            )
        if k == NodeKind.CALL:
            return self.compile_call(node)
        if k == NodeKind.INDEX:
            self.compile_expr(node.children[0])
            self.compile_expr(node.children[1])
            self.emit(Op.INDEX, site=node.site)
            return
        if k == NodeKind.FIELD_ACCESS:
            self.compile_expr(node.children[0])
            self.emit(Op.GET_FIELD, owner.const_index(node.value), site=node.site)
            return
        if k == NodeKind.UNARY_OP:
            if node.value == "-":
                self.emit(Op.LOAD_CONST, owner.const_index(0.0))
                self.compile_expr(node.children[0])
                self.emit(Op.SUB)
            else:
                self.compile_expr(node.children[0])
                self.emit(Op.NOT)
            return
        if k == NodeKind.BINARY_OP:
            return self.compile_binary(node)
        if k == NodeKind.ARRAY_LITERAL:
            for c in node.children:
                self.compile_expr(c)
            self.emit(Op.NEW_ARRAY, len(node.children))
            return
        if k == NodeKind.OBJECT_LITERAL:
            self.emit(Op.NEW_OBJECT)
            self.emit(Op.STORE_LOCAL, self.scratch)
            for key, value in zip(node.value, node.children):
                self.emit(Op.LOAD_LOCAL, self.scratch)
                self.compile_expr(value)
                self.emit(Op.SET_FIELD, owner.const_index(key))
            self.emit(Op.LOAD_LOCAL, self.scratch)
            return
        raise CompileError(f"cannot compile node kind {k.value}")

    def compile_call(self, node: AstNode):
        owner = self.owner
        name = node.value
        if name in _CONVERSION_BUILTINS:
            if len(node.children) != 1:
                raise CompileError(
                    f"{name} takes 1 argument at {node.line}:{node.col}"
                )
            self.compile_expr(node.children[0])
            self.emit(
                _CONVERSION_BUILTINS[name],
                b=owner.builtin_ids[name],
                site=node.site,
            )
            return
        if name in owner.builtin_ids:
            bid = owner.builtin_ids[name]
            arity = owner.builtin_arities[name]
            if len(node.children) != arity:
                raise CompileError(
                    f"builtin {name} takes {arity} argument(s),"
                    f" got {len(node.children)} at {node.line}:{node.col}"
                )
            for c in node.children:
                self.compile_expr(c)
            self.emit(Op.CALL_BUILTIN, bid, len(node.children), site=node.site)
            return
        if name in owner.fn_indexes:
            fidx = owner.fn_indexes[name]
            decl = owner.fn_decls[name]
            nparams = len(decl.children) - 1
            if len(node.children) != nparams:
                raise CompileError(
                    f"function {name} takes {nparams} argument(s),"
                    f" got {len(node.children)} at {node.line}:{node.col}"
                )
            for c in node.children:
                self.compile_expr(c)
            self.emit(Op.CALL, fidx, len(node.children), site=node.site)
            return
        raise CompileError(f"call to unknown function {name!r} at {node.line}:{node.col}")

    def compile_binary(self, node: AstNode):
        op = node.value
        if op in ("&&", "||"):
            # No Dup opcode: short-circuit via jumps, yielding a Bool.
            self.compile_expr(node.children[0])
            if op == "&&":
                jf = self.emit(Op.JMP_IF_FALSE)
                self.compile_expr(node.children[1])
                jend = self.emit(Op.JMP)
                self.patch_jump(jf)
                self.emit(Op.LOAD_CONST, self.owner.const_index(False))
                self.patch_jump(jend)
            else:
                jf = self.emit(Op.JMP_IF_FALSE)
                self.emit(Op.LOAD_CONST, self.owner.const_index(True))
                jend = self.emit(Op.JMP)
                self.patch_jump(jf)
                self.compile_expr(node.children[1])
                self.patch_jump(jend)
            return
        self.compile_expr(node.children[0])
        self.compile_expr(node.children[1])
        simple = {
            "+": Op.ADD,
            "-": Op.SUB,
            "*": Op.MUL,
            "/": Op.DIV,
            "%": Op.MOD,
            "==": Op.EQ,
            "<": Op.LT,
            ">": Op.GT,
        }
        if op in simple:
            self.emit(simple[op])
            return
        negated = {"!=": Op.EQ, "<=": Op.GT, ">=": Op.LT}
        self.emit(negated[op])
        self.emit(Op.NOT)

    def finish(self) -> FunctionCode:
        self.fc.local_count = len(self.locals)
        return self.fc


class _Compiler:
    def __init__(self, extra_builtins: tuple[tuple[str, int], ...] = ()):
        catalogue = BUILTIN_CATALOGUE + tuple(extra_builtins)
        self.builtin_names = tuple(name for name, _ in catalogue)
        self.builtin_ids = {name: i for i, (name, _) in enumerate(catalogue)}
        self.builtin_arities = dict(catalogue)
        if len(self.builtin_ids) != len(catalogue):
            raise CompileError("duplicate builtin name in catalogue")
        self.consts: list[object] = []
        self._const_keys: dict[tuple, int] = {}
        self.fn_indexes: dict[str, int] = {}
        self.fn_decls: dict[str, AstNode] = {}
        self.sites: dict[int, tuple[int, int]] = {}
        self._next_synthetic = 0

    def const_index(self, value: object) -> int:
        key = (type(value).__name__, value)
        if key in self._const_keys:
            return self._const_keys[key]
        self.consts.append(value)
        self._const_keys[key] = len(self.consts) - 1
        return len(self.consts) - 1

    def synthetic_site(self, node: AstNode) -> int:
        """A fresh site for constructs the parser did not number (returns)."""
        self._next_synthetic += 1
        site = self._synthetic_base + self._next_synthetic
        self.sites[site] = (node.line, node.col)
        return site

    def compile(self, ast: AstNode) -> BytecodeProgram:
        if ast.kind != NodeKind.PROGRAM:
            raise CompileError("expected a program node")
        self._collect_sites(ast)
        self._synthetic_base = max(self.sites, default=0)

        decls = [n for n in ast.children if n.kind == NodeKind.FN_DECL]
        top = [n for n in ast.children if n.kind != NodeKind.FN_DECL]
        for i, d in enumerate(decls):
            if d.value in self.fn_indexes:
                raise CompileError(f"duplicate function {d.value!r}")
            if d.value in self.builtin_ids:
                raise CompileError(f"function {d.value!r} shadows a builtin")
            self.fn_indexes[d.value] = i + 1
            self.fn_decls[d.value] = d

        main = _FnCompiler(self, "<main>", [])
        for stmt in top:
            main.compile_statement(stmt)
        main.emit(Op.HALT)
        functions = [main.finish()]

        for d in decls:
            params = [p.value for p in d.children[:-1]]
            fnc = _FnCompiler(self, d.value, params)
            fnc.compile_block(d.children[-1])
            fnc.emit(Op.LOAD_CONST, self.const_index(None))
            fnc.emit(Op.RETURN, site=self.synthetic_site(d))
            functions.append(fnc.finish())

        return BytecodeProgram(
            functions=functions,
            consts=self.consts,
            builtins=self.builtin_names,
            sites=self.sites,
        )

    def _collect_sites(self, node: AstNode):
        if node.site:
            self.sites[node.site] = (node.line, node.col)
        for c in node.children:
            self._collect_sites(c)


def compile_ast(
    ast: AstNode, extra_builtins: tuple[tuple[str, int], ...] = ()
) -> BytecodeProgram:
    """Compile a program AST. Deterministic: same AST, same bytes."""
    return _Compiler(extra_builtins).compile(ast)


def compile_source(
    source: str, extra_builtins: tuple[tuple[str, int], ...] = ()
) -> BytecodeProgram:
    from .lang import parse_source

    return compile_ast(parse_source(source), extra_builtins)


def program_dump(program: BytecodeProgram) -> str:
    """Readable listing, also used for byte-identity checks."""
    lines: list[str] = []
    for fi, fn in enumerate(program.functions):
        lines.append(f"fn[{fi}] {fn.name} params={fn.param_count} locals={fn.local_count}")
        for pc, ins in enumerate(fn.code):
            lines.append(f"  {pc:4d}  {ins.op.name:<14} a={ins.a} b={ins.b} site={ins.site}")
    lines.append(f"consts: {program.consts!r}")
    lines.append(f"builtins: {program.builtins!r}")
    lines.append(f"sites: {sorted(program.sites.items())!r}")
    return "\n".join(lines)
