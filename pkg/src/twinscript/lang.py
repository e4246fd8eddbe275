"""Lexer and parser for the ts0 mini script language.

ts0 is a deliberately small dynamic language: top-level functions, vars,
if/while, arrays, objects, builtin calls. There are no closures, no
exceptions and no asynchronous constructs, so control flow is a pure
function of the program inputs plus explicitly registered entropy values.

Every syntactic call, index and field access receives a dense SiteId
(1..N, in source order). Sites identify checkpoint locations and must be
identical across processes running the same source, so assignment happens
purely during parsing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class LexError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at {line}:{col}")
        self.message = message
        self.line = line
        self.col = col


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} at {line}:{col}")
        self.message = message
        self.line = line
        self.col = col


class TokenKind(enum.Enum):
    IDENT = "identifier"
    NUMBER = "number-literal"
    STRING = "string-literal"
    PUNCT = "punctuation"
    KEYWORD = "keyword"


KEYWORDS = frozenset(
    {"var", "fn", "if", "else", "while", "return", "true", "false", "null"}
)

_PUNCT2 = ("==", "!=", "<=", ">=", "&&", "||")
_PUNCT1 = set("+-*/%<>!=(){}[],;:.")

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}

_DIGITS = set("0123456789")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_CONT = _IDENT_START | _DIGITS


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    lexeme: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    """Split source into tokens. Raises LexError with line/col on bad input."""
    tokens: list[Token] = []
    i = 0
    line = 1
    col = 1
    n = len(source)

    def advance(k: int = 1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and source[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = source[i]
        if c in " \t\r\n":
            advance()
            continue
        if c == "/" and source[i : i + 2] == "//":
            while i < n and source[i] != "\n":
                advance()
            continue
        tl, tc = line, col
        if c in _DIGITS:
            j = i
            while j < n and source[j] in _DIGITS:
                j += 1
            if j < n and source[j] == "." and j + 1 < n and source[j + 1] in _DIGITS:
                j += 1
                while j < n and source[j] in _DIGITS:
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k < n and source[k] in _DIGITS:
                    j = k
                    while j < n and source[j] in _DIGITS:
                        j += 1
            lexeme = source[i:j]
            if float(lexeme) in (float("inf"), float("-inf")):
                raise LexError(f"number literal out of range: {lexeme}", tl, tc)
            tokens.append(Token(TokenKind.NUMBER, lexeme, tl, tc))
            advance(j - i)
            continue
        if c in _IDENT_START:
            j = i
            while j < n and source[j] in _IDENT_CONT:
                j += 1
            lexeme = source[i:j]
            kind = TokenKind.KEYWORD if lexeme in KEYWORDS else TokenKind.IDENT
            tokens.append(Token(kind, lexeme, tl, tc))
            advance(j - i)
            continue
        if c == '"':
            advance()
            chars: list[str] = []
            while True:
                if i >= n or source[i] == "\n":
                    raise LexError("unterminated string", tl, tc)
                ch = source[i]
                if ch == '"':
                    advance()
                    break
                if ch == "\\":
                    advance()
                    if i >= n or source[i] not in _ESCAPES:
                        raise LexError("bad escape in string", line, col)
                    chars.append(_ESCAPES[source[i]])
                    advance()
                    continue
                chars.append(ch)
                advance()
            tokens.append(Token(TokenKind.STRING, "".join(chars), tl, tc))
            continue
        two = source[i : i + 2]
        if two in _PUNCT2:
            tokens.append(Token(TokenKind.PUNCT, two, tl, tc))
            advance(2)
            continue
        if c in _PUNCT1:
            tokens.append(Token(TokenKind.PUNCT, c, tl, tc))
            advance()
            continue
        raise LexError(f"illegal character {c!r}", tl, tc)
    return tokens


class NodeKind(enum.Enum):
    PROGRAM = "program"
    BLOCK = "block"
    FN_DECL = "fn-decl"
    VAR_DECL = "var-decl"
    ASSIGN = "assign"
    IF = "if"
    WHILE = "while"
    RETURN = "return"
    CALL = "call"
    INDEX = "index"
    FIELD_ACCESS = "field-access"
    BINARY_OP = "binary-op"
    UNARY_OP = "unary-op"
    LITERAL = "literal"
    IDENTIFIER = "identifier"
    ARRAY_LITERAL = "array-literal"
    OBJECT_LITERAL = "object-literal"


@dataclass
class AstNode:
    kind: NodeKind
    children: list["AstNode"] = field(default_factory=list)
    value: object = None
    site: int = 0
    line: int = 0
    col: int = 0


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.next_site = 1

    def _peek(self) -> Token | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _at(self, lexeme: str) -> bool:
        t = self._peek()
        return t is not None and t.lexeme == lexeme and t.kind in (
            TokenKind.PUNCT,
            TokenKind.KEYWORD,
        )

    def _take(self) -> Token:
        t = self._peek()
        if t is None:
            last = self.tokens[-1] if self.tokens else Token(TokenKind.PUNCT, "", 1, 1)
            raise ParseError("unexpected end of input", last.line, last.col)
        self.pos += 1
        return t

    def _expect(self, lexeme: str) -> Token:
        t = self._peek()
        if t is None or t.lexeme != lexeme:
            at = t if t is not None else (self.tokens[-1] if self.tokens else None)
            line, col = (at.line, at.col) if at else (1, 1)
            raise ParseError(f"expected {lexeme}", line, col)
        return self._take()

    def _expect_ident(self) -> Token:
        t = self._peek()
        if t is None or t.kind != TokenKind.IDENT:
            at = t if t is not None else (self.tokens[-1] if self.tokens else None)
            line, col = (at.line, at.col) if at else (1, 1)
            raise ParseError("expected identifier", line, col)
        return self._take()

    def _site(self) -> int:
        s = self.next_site
        self.next_site += 1
        return s

    # statements

    def parse_program(self) -> AstNode:
        prog = AstNode(NodeKind.PROGRAM, line=1, col=1)
        while self._peek() is not None:
            if self._at("fn"):
                prog.children.append(self._fn_decl())
            else:
                prog.children.append(self._statement())
        return prog

    def _fn_decl(self) -> AstNode:
        t = self._expect("fn")
        name = self._expect_ident()
        self._expect("(")
        params: list[AstNode] = []
        if not self._at(")"):
            while True:
                p = self._expect_ident()
                params.append(
                    AstNode(NodeKind.IDENTIFIER, value=p.lexeme, line=p.line, col=p.col)
                )
                if self._at(","):
                    self._take()
                    continue
                break
        self._expect(")")
        body = self._block()
        node = AstNode(NodeKind.FN_DECL, value=name.lexeme, line=t.line, col=t.col)
        node.children = params + [body]
        return node

    def _block(self) -> AstNode:
        t = self._expect("{")
        node = AstNode(NodeKind.BLOCK, line=t.line, col=t.col)
        while not self._at("}"):
            if self._peek() is None:
                raise ParseError("expected }", t.line, t.col)
            node.children.append(self._statement())
        self._expect("}")
        return node

    def _statement(self) -> AstNode:
        if self._at("var"):
            t = self._take()
            name = self._expect_ident()
            self._expect("=")
            init = self._expression()
            self._expect(";")
            return AstNode(
                NodeKind.VAR_DECL, [init], value=name.lexeme, line=t.line, col=t.col
            )
        if self._at("if"):
            return self._if_statement()
        if self._at("while"):
            t = self._take()
            self._expect("(")
            cond = self._expression()
            self._expect(")")
            body = self._block()
            return AstNode(NodeKind.WHILE, [cond, body], line=t.line, col=t.col)
        if self._at("return"):
            t = self._take()
            children = []
            if not self._at(";"):
                children.append(self._expression())
            self._expect(";")
            return AstNode(NodeKind.RETURN, children, line=t.line, col=t.col)
        expr = self._expression()
        if self._at("="):
            eq = self._take()
            if expr.kind not in (
                NodeKind.IDENTIFIER,
                NodeKind.INDEX,
                NodeKind.FIELD_ACCESS,
            ):
                raise ParseError("invalid assignment target", eq.line, eq.col)
            value = self._expression()
            self._expect(";")
            return AstNode(
                NodeKind.ASSIGN, [expr, value], line=expr.line, col=expr.col
            )
        self._expect(";")
        return expr

    def _if_statement(self) -> AstNode:
        t = self._expect("if")
        self._expect("(")
        cond = self._expression()
        self._expect(")")
        then = self._block()
        children = [cond, then]
        if self._at("else"):
            self._take()
            if self._at("if"):
                children.append(self._if_statement())
            else:
                children.append(self._block())
        return AstNode(NodeKind.IF, children, line=t.line, col=t.col)

    # expressions, lowest precedence first

    def _expression(self) -> AstNode:
        return self._or_expr()

    def _binary_level(self, ops: tuple[str, ...], next_level) -> AstNode:
        node = next_level()
        while True:
            t = self._peek()
            if t is None or t.kind != TokenKind.PUNCT or t.lexeme not in ops:
                return node
            self._take()
            rhs = next_level()
            node = AstNode(
                NodeKind.BINARY_OP, [node, rhs], value=t.lexeme, line=t.line, col=t.col
            )

    def _or_expr(self) -> AstNode:
        return self._binary_level(("||",), self._and_expr)

    def _and_expr(self) -> AstNode:
        return self._binary_level(("&&",), self._equality)

    def _equality(self) -> AstNode:
        return self._binary_level(("==", "!="), self._comparison)

    def _comparison(self) -> AstNode:
        return self._binary_level(("<", ">", "<=", ">="), self._additive)

    def _additive(self) -> AstNode:
        return self._binary_level(("+", "-"), self._multiplicative)

    def _multiplicative(self) -> AstNode:
        return self._binary_level(("*", "/", "%"), self._unary)

    def _unary(self) -> AstNode:
        t = self._peek()
        if t is not None and t.kind == TokenKind.PUNCT and t.lexeme in ("!", "-"):
            self._take()
            operand = self._unary()
            return AstNode(
                NodeKind.UNARY_OP, [operand], value=t.lexeme, line=t.line, col=t.col
            )
        return self._postfix()

    def _postfix(self) -> AstNode:
        node = self._primary()
        while True:
            # sites are handed out at the opening token so that numbering
            # follows source order, outer constructs before their arguments
            if self._at("("):
                if node.kind != NodeKind.IDENTIFIER:
                    t = self._peek()
                    raise ParseError("can only call a named function", t.line, t.col)
                t = self._take()
                site = self._site()
                args: list[AstNode] = []
                if not self._at(")"):
                    while True:
                        args.append(self._expression())
                        if self._at(","):
                            self._take()
                            continue
                        break
                self._expect(")")
                node = AstNode(
                    NodeKind.CALL,
                    args,
                    value=node.value,
                    site=site,
                    line=t.line,
                    col=t.col,
                )
                continue
            if self._at("["):
                t = self._take()
                site = self._site()
                idx = self._expression()
                self._expect("]")
                node = AstNode(
                    NodeKind.INDEX,
                    [node, idx],
                    site=site,
                    line=t.line,
                    col=t.col,
                )
                continue
            if self._at("."):
                t = self._take()
                site = self._site()
                name = self._expect_ident()
                node = AstNode(
                    NodeKind.FIELD_ACCESS,
                    [node],
                    value=name.lexeme,
                    site=site,
                    line=t.line,
                    col=t.col,
                )
                continue
            return node

    def _primary(self) -> AstNode:
        t = self._peek()
        if t is None:
            last = self.tokens[-1] if self.tokens else None
            line, col = (last.line, last.col) if last else (1, 1)
            raise ParseError("expected expression", line, col)
        if t.kind == TokenKind.NUMBER:
            self._take()
            return AstNode(
                NodeKind.LITERAL, value=float(t.lexeme), line=t.line, col=t.col
            )
        if t.kind == TokenKind.STRING:
            self._take()
            return AstNode(NodeKind.LITERAL, value=t.lexeme, line=t.line, col=t.col)
        if t.kind == TokenKind.KEYWORD and t.lexeme in ("true", "false", "null"):
            self._take()
            value = {"true": True, "false": False, "null": None}[t.lexeme]
            return AstNode(NodeKind.LITERAL, value=value, line=t.line, col=t.col)
        if t.kind == TokenKind.IDENT:
            self._take()
            return AstNode(NodeKind.IDENTIFIER, value=t.lexeme, line=t.line, col=t.col)
        if t.lexeme == "(":
            self._take()
            node = self._expression()
            self._expect(")")
            return node
        if t.lexeme == "[":
            self._take()
            elems: list[AstNode] = []
            if not self._at("]"):
                while True:
                    elems.append(self._expression())
                    if self._at(","):
                        self._take()
                        continue
                    break
            self._expect("]")
            return AstNode(NodeKind.ARRAY_LITERAL, elems, line=t.line, col=t.col)
        if t.lexeme == "{":
            self._take()
            keys: list[str] = []
            values: list[AstNode] = []
            if not self._at("}"):
                while True:
                    k = self._expect_ident()
                    self._expect(":")
                    keys.append(k.lexeme)
                    values.append(self._expression())
                    if self._at(","):
                        self._take()
                        continue
                    break
            self._expect("}")
            return AstNode(
                NodeKind.OBJECT_LITERAL,
                values,
                value=tuple(keys),
                line=t.line,
                col=t.col,
            )
        raise ParseError(f"unexpected token {t.lexeme!r}", t.line, t.col)


def parse(tokens: list[Token]) -> AstNode:
    """Parse a token stream into a program AST with dense SiteIds."""
    parser = _Parser(tokens)
    return parser.parse_program()


def parse_source(source: str) -> AstNode:
    return parse(tokenize(source))


def ast_dump(node: AstNode) -> bytes:
    """Stable byte serialization of an AST, for determinism checks."""
    parts: list[str] = []

    def walk(n: AstNode):
        parts.append(f"({n.kind.value}|{n.value!r}|{n.site}|{n.line}:{n.col}")
        for c in n.children:
            walk(c)
        parts.append(")")

    walk(node)
    return "".join(parts).encode("utf-8")


def collect_sites(node: AstNode) -> list[int]:
    """All SiteIds in the tree, in traversal order."""
    out: list[int] = []

    def walk(n: AstNode):
        if n.site:
            out.append(n.site)
        for c in n.children:
            walk(c)

    walk(node)
    return out
