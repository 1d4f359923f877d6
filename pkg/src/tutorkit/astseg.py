"""Small imperative-code parser and pedagogical subtask segmentation.

Covers an indentation-based subset: function definitions, for/while loops,
conditionals, (augmented) assignments, tuple swaps, returns, calls, subscripts
and arithmetic/comparison expressions. The grammar (EBNF) ships in
docs/grammar.ebnf. `segment` turns a parse tree into an ordered SubtaskPlan,
and `plan_coverage` measures how much of a plan a candidate text discloses.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources


class LexError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"{message} at line {line}, col {col}")


class ParseSyntaxError(ValueError):
    def __init__(self, message: str, line: int, col: int, expected: tuple[str, ...] = ()):
        self.line = line
        self.col = col
        self.expected = expected
        hint = f" (expected one of: {', '.join(expected)})" if expected else ""
        super().__init__(f"{message} at line {line}, col {col}{hint}")


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

KEYWORDS = frozenset({"def", "for", "while", "if", "else", "return", "in", "range"})
TWO_CHAR_OPS = ("==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=")
SINGLE_CHAR_OPS = frozenset("=<>+-*/%()[],:")

_NAME_RE = re.compile(r"[A-Za-z_]\w*")
_NUMBER_RE = re.compile(r"\d+(\.\d+)?")


class TokenKind(Enum):
    NAME = "NAME"
    NUMBER = "NUMBER"
    KEYWORD = "KEYWORD"
    OP = "OP"
    NEWLINE = "NEWLINE"
    INDENT = "INDENT"
    DEDENT = "DEDENT"
    END = "END"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    """Longest-match lexing with indentation converted to INDENT/DEDENT."""
    tokens: list[Token] = []
    indent_stack = [0]
    indent_char: str | None = None
    lines = source.split("\n")
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        indent = raw[: len(raw) - len(raw.lstrip(" \t"))]
        if " " in indent and "\t" in indent:
            raise LexError("mixed tabs and spaces in indentation", lineno, 1)
        if indent:
            char = indent[0]
            if indent_char is None:
                indent_char = char
            elif char != indent_char:
                raise LexError("inconsistent indentation character", lineno, 1)
        width = len(indent)
        if width > indent_stack[-1]:
            indent_stack.append(width)
            tokens.append(Token(TokenKind.INDENT, "", lineno, 1))
        else:
            while width < indent_stack[-1]:
                indent_stack.pop()
                tokens.append(Token(TokenKind.DEDENT, "", lineno, 1))
            if width != indent_stack[-1]:
                raise LexError("unindent does not match any outer level", lineno, 1)
        pos = len(indent)
        while pos < len(raw):
            ch = raw[pos]
            if ch in " \t":
                pos += 1
                continue
            if ch == "#":
                break
            col = pos + 1
            two = raw[pos : pos + 2]
            if two in TWO_CHAR_OPS:
                tokens.append(Token(TokenKind.OP, two, lineno, col))
                pos += 2
                continue
            m = _NUMBER_RE.match(raw, pos)
            if m:
                tokens.append(Token(TokenKind.NUMBER, m.group(), lineno, col))
                pos = m.end()
                continue
            m = _NAME_RE.match(raw, pos)
            if m:
                word = m.group()
                kind = TokenKind.KEYWORD if word in KEYWORDS else TokenKind.NAME
                tokens.append(Token(kind, word, lineno, col))
                pos = m.end()
                continue
            if ch in SINGLE_CHAR_OPS:
                tokens.append(Token(TokenKind.OP, ch, lineno, col))
                pos += 1
                continue
            raise LexError(f"illegal character {ch!r}", lineno, col)
        tokens.append(Token(TokenKind.NEWLINE, "", lineno, len(raw) + 1))
    while len(indent_stack) > 1:
        indent_stack.pop()
        tokens.append(Token(TokenKind.DEDENT, "", lineno + 1, 1))
    tokens.append(Token(TokenKind.END, "", lineno + 1, 1))
    return tokens


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class NodeKind(Enum):
    MODULE = "Module"
    FUNCTION_DEF = "FunctionDef"
    PARAMS = "Params"
    FOR = "For"
    WHILE = "While"
    IF = "If"
    ASSIGN = "Assign"
    AUG_ASSIGN = "AugAssign"
    COMPARE = "Compare"
    BIN_OP = "BinOp"
    CALL = "Call"
    SUBSCRIPT = "Subscript"
    NAME = "Name"
    NUMBER = "Number"
    RETURN = "Return"
    SWAP = "Swap"


@dataclass(frozen=True)
class Span:
    start_line: int
    start_col: int
    end_line: int
    end_col: int

    def contains(self, other: "Span") -> bool:
        start_ok = (self.start_line, self.start_col) <= (other.start_line, other.start_col)
        end_ok = (other.end_line, other.end_col) <= (self.end_line, self.end_col)
        return start_ok and end_ok


@dataclass(frozen=True)
class AstNode:
    kind: NodeKind
    children: tuple["AstNode", ...] = ()
    span: Span = Span(0, 0, 0, 0)
    value: str | None = None
    orelse: tuple["AstNode", ...] = ()

    def walk(self):
        yield self
        for child in self.children:
            yield from child.walk()
        for child in self.orelse:
            yield from child.walk()


def structurally_equal(a: AstNode, b: AstNode) -> bool:
    """Tree equality ignoring source spans."""
    if a.kind is not b.kind or a.value != b.value:
        return False
    if len(a.children) != len(b.children) or len(a.orelse) != len(b.orelse):
        return False
    return all(structurally_equal(x, y) for x, y in zip(a.children, b.children)) and all(
        structurally_equal(x, y) for x, y in zip(a.orelse, b.orelse)
    )


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_EXPR_START = ("NAME", "NUMBER", "'('", "'-'", "'range'")


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.current
        if tok.kind is not TokenKind.END:
            self.pos += 1
        return tok

    def check(self, kind: TokenKind, value: str | None = None) -> bool:
        tok = self.current
        return tok.kind is kind and (value is None or tok.value == value)

    def expect(self, kind: TokenKind, value: str | None = None) -> Token:
        if not self.check(kind, value):
            tok = self.current
            want = value if value is not None else kind.value
            raise ParseSyntaxError(
                f"unexpected {tok.kind.value} {tok.value!r}", tok.line, tok.col, (f"'{want}'",)
            )
        return self.advance()

    def fail(self, message: str, expected: tuple[str, ...]):
        tok = self.current
        raise ParseSyntaxError(message, tok.line, tok.col, expected)

    # -- statements --------------------------------------------------------

    def parse_module(self) -> AstNode:
        body: list[AstNode] = []
        while not self.check(TokenKind.END):
            body.append(self.parse_statement())
        if body:
            span = _cover(body)
        else:
            span = Span(1, 1, 1, 1)
        return AstNode(NodeKind.MODULE, tuple(body), span)

    def parse_statement(self) -> AstNode:
        tok = self.current
        if tok.kind is TokenKind.KEYWORD:
            if tok.value == "def":
                return self.parse_funcdef()
            if tok.value == "for":
                return self.parse_for()
            if tok.value == "while":
                return self.parse_while()
            if tok.value == "if":
                return self.parse_if()
            if tok.value == "return":
                return self.parse_return()
        return self.parse_simple()

    def parse_funcdef(self) -> AstNode:
        start = self.expect(TokenKind.KEYWORD, "def")
        name = self.expect(TokenKind.NAME)
        lparen = self.expect(TokenKind.OP, "(")
        params: list[AstNode] = []
        while not self.check(TokenKind.OP, ")"):
            ptok = self.expect(TokenKind.NAME)
            params.append(_name_node(ptok))
            if not self.check(TokenKind.OP, ")"):
                self.expect(TokenKind.OP, ",")
        rparen = self.expect(TokenKind.OP, ")")
        params_span = Span(lparen.line, lparen.col, rparen.line, rparen.col + 1)
        params_node = AstNode(NodeKind.PARAMS, tuple(params), params_span)
        self.expect(TokenKind.OP, ":")
        body = self.parse_block()
        span = _span_from(start, _cover([params_node] + body))
        return AstNode(
            NodeKind.FUNCTION_DEF, (params_node, *body), span, value=name.value
        )

    def parse_for(self) -> AstNode:
        start = self.expect(TokenKind.KEYWORD, "for")
        var = _name_node(self.expect(TokenKind.NAME))
        self.expect(TokenKind.KEYWORD, "in")
        iterable = self.parse_expr()
        self.expect(TokenKind.OP, ":")
        body = self.parse_block()
        span = _span_from(start, _cover([var, iterable] + body))
        return AstNode(NodeKind.FOR, (var, iterable, *body), span)

    def parse_while(self) -> AstNode:
        start = self.expect(TokenKind.KEYWORD, "while")
        test = self.parse_expr()
        self.expect(TokenKind.OP, ":")
        body = self.parse_block()
        span = _span_from(start, _cover([test] + body))
        return AstNode(NodeKind.WHILE, (test, *body), span)

    def parse_if(self) -> AstNode:
        start = self.expect(TokenKind.KEYWORD, "if")
        test = self.parse_expr()
        self.expect(TokenKind.OP, ":")
        body = self.parse_block()
        orelse: list[AstNode] = []
        if self.check(TokenKind.KEYWORD, "else"):
            self.advance()
            self.expect(TokenKind.OP, ":")
            orelse = self.parse_block()
        span = _span_from(start, _cover([test] + body + orelse))
        return AstNode(NodeKind.IF, (test, *body), span, orelse=tuple(orelse))

    def parse_return(self) -> AstNode:
        start = self.expect(TokenKind.KEYWORD, "return")
        children: tuple[AstNode, ...] = ()
        if not self.check(TokenKind.NEWLINE) and not self.check(TokenKind.END):
            children = (self.parse_expr(),)
        if self.check(TokenKind.NEWLINE):
            self.advance()
        span = (
            _span_from(start, _cover(list(children)))
            if children
            else Span(start.line, start.col, start.line, start.col + len("return"))
        )
        return AstNode(NodeKind.RETURN, children, span)

    def parse_block(self) -> list[AstNode]:
        # Either an indented suite or a single statement on the same line.
        if self.check(TokenKind.NEWLINE):
            self.advance()
            self.expect(TokenKind.INDENT)
            body = []
            while not self.check(TokenKind.DEDENT) and not self.check(TokenKind.END):
                body.append(self.parse_statement())
            if self.check(TokenKind.DEDENT):
                self.advance()
            if not body:
                self.fail("empty block", ("statement",))
            return body
        return [self.parse_statement()]

    def parse_simple(self) -> AstNode:
        first = self.parse_expr()
        node: AstNode
        if self.check(TokenKind.OP, ","):
            self.advance()
            second = self.parse_expr()
            _require_target(second, self)
            _require_target(first, self)
            self.expect(TokenKind.OP, "=")
            rhs1 = self.parse_expr()
            self.expect(TokenKind.OP, ",")
            rhs2 = self.parse_expr()
            node = AstNode(
                NodeKind.SWAP,
                (first, second, rhs1, rhs2),
                _cover([first, second, rhs1, rhs2]),
            )
        elif self.check(TokenKind.OP, "="):
            _require_target(first, self)
            self.advance()
            rhs = self.parse_expr()
            node = AstNode(NodeKind.ASSIGN, (first, rhs), _cover([first, rhs]))
        elif self.current.kind is TokenKind.OP and self.current.value in (
            "+=",
            "-=",
            "*=",
            "/=",
            "%=",
        ):
            _require_target(first, self)
            op = self.advance().value
            rhs = self.parse_expr()
            node = AstNode(NodeKind.AUG_ASSIGN, (first, rhs), _cover([first, rhs]), value=op)
        else:
            node = first
        if self.check(TokenKind.NEWLINE):
            self.advance()
        return node

    # -- expressions --------------------------------------------------------

    def parse_expr(self) -> AstNode:
        left = self.parse_arith()
        if self.current.kind is TokenKind.OP and self.current.value in (
            "<",
            ">",
            "==",
            "!=",
            "<=",
            ">=",
        ):
            op = self.advance().value
            right = self.parse_arith()
            return AstNode(NodeKind.COMPARE, (left, right), _cover([left, right]), value=op)
        return left

    def parse_arith(self) -> AstNode:
        node = self.parse_term()
        while self.current.kind is TokenKind.OP and self.current.value in ("+", "-"):
            op = self.advance().value
            right = self.parse_term()
            node = AstNode(NodeKind.BIN_OP, (node, right), _cover([node, right]), value=op)
        return node

    def parse_term(self) -> AstNode:
        node = self.parse_factor()
        while self.current.kind is TokenKind.OP and self.current.value in ("*", "/", "%"):
            op = self.advance().value
            right = self.parse_factor()
            node = AstNode(NodeKind.BIN_OP, (node, right), _cover([node, right]), value=op)
        return node

    def parse_factor(self) -> AstNode:
        tok = self.current
        if tok.kind is TokenKind.NUMBER:
            self.advance()
            return AstNode(
                NodeKind.NUMBER,
                (),
                Span(tok.line, tok.col, tok.line, tok.col + len(tok.value)),
                value=tok.value,
            )
        if tok.kind is TokenKind.OP and tok.value == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect(TokenKind.OP, ")")
            return inner
        if tok.kind is TokenKind.OP and tok.value == "-":
            # Unary minus lowers to (0 - x); reparse-stable.
            self.advance()
            operand = self.parse_factor()
            zero = AstNode(
                NodeKind.NUMBER, (), Span(tok.line, tok.col, tok.line, tok.col + 1), value="0"
            )
            return AstNode(NodeKind.BIN_OP, (zero, operand), _cover([zero, operand]), value="-")
        if tok.kind is TokenKind.NAME or (
            tok.kind is TokenKind.KEYWORD and tok.value == "range"
        ):
            self.advance()
            node = _name_node(tok)
            return self.parse_postfix(node)
        self.fail(f"unexpected {tok.kind.value} {tok.value!r}", _EXPR_START)
        raise AssertionError("unreachable")

    def parse_postfix(self, node: AstNode) -> AstNode:
        while True:
            if self.check(TokenKind.OP, "("):
                self.advance()
                args: list[AstNode] = []
                while not self.check(TokenKind.OP, ")"):
                    args.append(self.parse_expr())
                    if not self.check(TokenKind.OP, ")"):
                        self.expect(TokenKind.OP, ",")
                close = self.expect(TokenKind.OP, ")")
                span = Span(
                    node.span.start_line, node.span.start_col, close.line, close.col + 1
                )
                node = AstNode(NodeKind.CALL, (node, *args), span)
            elif self.check(TokenKind.OP, "["):
                self.advance()
                index = self.parse_expr()
                close = self.expect(TokenKind.OP, "]")
                span = Span(
                    node.span.start_line, node.span.start_col, close.line, close.col + 1
                )
                node = AstNode(NodeKind.SUBSCRIPT, (node, index), span)
            else:
                return node


def _name_node(tok: Token) -> AstNode:
    return AstNode(
        NodeKind.NAME,
        (),
        Span(tok.line, tok.col, tok.line, tok.col + len(tok.value)),
        value=tok.value,
    )


def _require_target(node: AstNode, parser: _Parser) -> None:
    if node.kind not in (NodeKind.NAME, NodeKind.SUBSCRIPT):
        raise ParseSyntaxError(
            "assignment target must be a name or subscript",
            node.span.start_line,
            node.span.start_col,
        )


def _cover(nodes: list[AstNode]) -> Span:
    spans = [n.span for n in nodes]
    start = min((s.start_line, s.start_col) for s in spans)
    end = max((s.end_line, s.end_col) for s in spans)
    return Span(start[0], start[1], end[0], end[1])


def _span_from(start_tok: Token, rest: Span) -> Span:
    return Span(start_tok.line, start_tok.col, rest.end_line, rest.end_col)


def parse(tokens: list[Token]) -> AstNode:
    """Recursive-descent parse of a token stream into a Module tree."""
    return _Parser(tokens).parse_module()


def parse_source(source: str) -> AstNode:
    return parse(tokenize(source))


# ---------------------------------------------------------------------------
# Unparser
# ---------------------------------------------------------------------------


def unparse(node: AstNode, indent: int = 0) -> str:
    pad = "    " * indent
    kind = node.kind
    if kind is NodeKind.MODULE:
        return "\n".join(unparse(child, indent) for child in node.children)
    if kind is NodeKind.FUNCTION_DEF:
        params = ", ".join(p.value or "" for p in node.children[0].children)
        body = "\n".join(unparse(child, indent + 1) for child in node.children[1:])
        return f"{pad}def {node.value}({params}):\n{body}"
    if kind is NodeKind.FOR:
        var, iterable = node.children[0], node.children[1]
        body = "\n".join(unparse(child, indent + 1) for child in node.children[2:])
        return f"{pad}for {var.value} in {_expr(iterable)}:\n{body}"
    if kind is NodeKind.WHILE:
        body = "\n".join(unparse(child, indent + 1) for child in node.children[1:])
        return f"{pad}while {_expr(node.children[0])}:\n{body}"
    if kind is NodeKind.IF:
        body = "\n".join(unparse(child, indent + 1) for child in node.children[1:])
        text = f"{pad}if {_expr(node.children[0])}:\n{body}"
        if node.orelse:
            else_body = "\n".join(unparse(child, indent + 1) for child in node.orelse)
            text += f"\n{pad}else:\n{else_body}"
        return text
    if kind is NodeKind.ASSIGN:
        return f"{pad}{_expr(node.children[0])} = {_expr(node.children[1])}"
    if kind is NodeKind.AUG_ASSIGN:
        return f"{pad}{_expr(node.children[0])} {node.value} {_expr(node.children[1])}"
    if kind is NodeKind.SWAP:
        t1, t2, e1, e2 = node.children
        return f"{pad}{_expr(t1)}, {_expr(t2)} = {_expr(e1)}, {_expr(e2)}"
    if kind is NodeKind.RETURN:
        if node.children:
            return f"{pad}return {_expr(node.children[0])}"
        return f"{pad}return"
    return pad + _expr(node)


def _expr(node: AstNode) -> str:
    kind = node.kind
    if kind is NodeKind.NAME or kind is NodeKind.NUMBER:
        return node.value or ""
    if kind is NodeKind.BIN_OP:
        return f"({_expr(node.children[0])} {node.value} {_expr(node.children[1])})"
    if kind is NodeKind.COMPARE:
        return f"{_expr(node.children[0])} {node.value} {_expr(node.children[1])}"
    if kind is NodeKind.CALL:
        args = ", ".join(_expr(arg) for arg in node.children[1:])
        return f"{_expr(node.children[0])}({args})"
    if kind is NodeKind.SUBSCRIPT:
        return f"{_expr(node.children[0])}[{_expr(node.children[1])}]"
    raise ValueError(f"cannot render {kind.value} as an expression")


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------


class KnowledgeTag(str, Enum):
    FUNCTION_DEFINITION = "function_definition"
    LOOP = "loop"
    CONDITIONAL = "conditional"
    ASSIGNMENT = "assignment"
    SWAP = "swap"
    RETURN = "return"
    CALL = "call"
    COMPARISON = "comparison"


@dataclass(frozen=True)
class Subtask:
    index: int
    tag: KnowledgeTag
    description: str
    depends_on: frozenset[int]
    span: Span


@dataclass(frozen=True)
class SubtaskPlan:
    subtasks: tuple[Subtask, ...] = ()

    def __post_init__(self) -> None:
        for i, st in enumerate(self.subtasks, start=1):
            if st.index != i:
                raise ValueError(f"subtask indices must be contiguous from 1, got {st.index}")
            if any(dep >= st.index or dep < 1 for dep in st.depends_on):
                raise ValueError(f"subtask {st.index} depends on non-earlier {st.depends_on}")

    def __len__(self) -> int:
        return len(self.subtasks)

    def tag_counts(self) -> dict[KnowledgeTag, int]:
        counts: dict[KnowledgeTag, int] = {}
        for st in self.subtasks:
            counts[st.tag] = counts.get(st.tag, 0) + 1
        return counts

    def to_json(self) -> list[dict]:
        return [
            {
                "index": st.index,
                "tag": st.tag.value,
                "description": st.description,
                "depends_on": sorted(st.depends_on),
                "span": [
                    st.span.start_line,
                    st.span.start_col,
                    st.span.end_line,
                    st.span.end_col,
                ],
            }
            for st in self.subtasks
        ]


def load_templates(path: str | None = None) -> dict[str, str]:
    """Description templates per knowledge tag; the default set ships as package data."""
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    data = resources.files("tutorkit").joinpath("segment_templates.json").read_text("utf-8")
    return json.loads(data)


def _describe(node: AstNode, tag: KnowledgeTag, templates: dict[str, str]) -> str:
    if tag is KnowledgeTag.FUNCTION_DEFINITION:
        params = ", ".join(p.value or "" for p in node.children[0].children)
        return templates["function_definition"].format(name=node.value, params=params)
    if tag is KnowledgeTag.LOOP:
        if node.kind is NodeKind.FOR:
            return templates["loop_for"].format(
                var=node.children[0].value, iter=_expr(node.children[1])
            )
        return templates["loop_while"].format(cond=_expr(node.children[0]))
    if tag is KnowledgeTag.CONDITIONAL:
        return templates["conditional"].format(test=_expr(node.children[0]))
    if tag is KnowledgeTag.SWAP:
        return templates["swap"].format(
            a=_expr(node.children[0]), b=_expr(node.children[1])
        )
    if tag is KnowledgeTag.RETURN:
        if node.children:
            return templates["return"].format(expr=_expr(node.children[0]))
        return templates["return_bare"]
    if tag is KnowledgeTag.ASSIGNMENT:
        return templates["assignment"].format(
            target=_expr(node.children[0]), expr=_expr(node.children[1])
        )
    raise ValueError(f"no description template for tag {tag.value}")


_SIGNIFICANT: dict[NodeKind, KnowledgeTag] = {
    NodeKind.FUNCTION_DEF: KnowledgeTag.FUNCTION_DEFINITION,
    NodeKind.FOR: KnowledgeTag.LOOP,
    NodeKind.WHILE: KnowledgeTag.LOOP,
    NodeKind.IF: KnowledgeTag.CONDITIONAL,
    NodeKind.SWAP: KnowledgeTag.SWAP,
    NodeKind.RETURN: KnowledgeTag.RETURN,
}


def segment(ast: AstNode, templates: dict[str, str] | None = None) -> SubtaskPlan:
    """Pre-order walk emitting one subtask per pedagogically significant node.

    Each subtask depends on its nearest enclosing subtask; order is source order.
    """
    templates = templates or load_templates()
    subtasks: list[Subtask] = []

    def visit(node: AstNode, enclosing: int | None, at_top: bool) -> None:
        tag: KnowledgeTag | None = _SIGNIFICANT.get(node.kind)
        if tag is None and node.kind is NodeKind.ASSIGN and at_top:
            tag = KnowledgeTag.ASSIGNMENT
        here = enclosing
        if tag is not None:
            index = len(subtasks) + 1
            deps = frozenset({enclosing}) if enclosing is not None else frozenset()
            subtasks.append(
                Subtask(
                    index=index,
                    tag=tag,
                    description=_describe(node, tag, templates),
                    depends_on=deps,
                    span=node.span,
                )
            )
            here = index
        for child in node.children:
            visit(child, here, at_top=node.kind is NodeKind.MODULE)
        for child in node.orelse:
            visit(child, here, at_top=False)

    for child in ast.children:
        visit(child, None, at_top=ast.kind is NodeKind.MODULE)
    return SubtaskPlan(tuple(subtasks))


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------

_NODE_TAGS: dict[NodeKind, KnowledgeTag] = {
    NodeKind.FUNCTION_DEF: KnowledgeTag.FUNCTION_DEFINITION,
    NodeKind.FOR: KnowledgeTag.LOOP,
    NodeKind.WHILE: KnowledgeTag.LOOP,
    NodeKind.IF: KnowledgeTag.CONDITIONAL,
    NodeKind.SWAP: KnowledgeTag.SWAP,
    NodeKind.RETURN: KnowledgeTag.RETURN,
    NodeKind.ASSIGN: KnowledgeTag.ASSIGNMENT,
    NodeKind.AUG_ASSIGN: KnowledgeTag.ASSIGNMENT,
    NodeKind.CALL: KnowledgeTag.CALL,
    NodeKind.COMPARE: KnowledgeTag.COMPARISON,
}

_HEURISTIC_WORDS = {
    "def": KnowledgeTag.FUNCTION_DEFINITION,
    "for": KnowledgeTag.LOOP,
    "while": KnowledgeTag.LOOP,
    "if": KnowledgeTag.CONDITIONAL,
    "return": KnowledgeTag.RETURN,
}
_HEURISTIC_WORD_RE = re.compile(r"\b(def|for|while|if|return)\b")
_COMPARISON_RE = re.compile(r"==|!=|<=|>=|<|>")
_SWAP_LINE_RE = re.compile(r"\S+\s*,\s*\S+\s*=\s*\S+\s*,\s*\S+")
_PLAIN_ASSIGN_RE = re.compile(r"(?<![=<>!+\-*/%])=(?!=)")


def _ast_tag_counts(ast: AstNode) -> dict[KnowledgeTag, int]:
    counts: dict[KnowledgeTag, int] = {}
    for node in ast.walk():
        tag = _NODE_TAGS.get(node.kind)
        if tag is not None:
            counts[tag] = counts.get(tag, 0) + 1
    return counts


def _heuristic_tag_counts(text: str) -> dict[KnowledgeTag, int]:
    counts: dict[KnowledgeTag, int] = {}

    def bump(tag: KnowledgeTag, amount: int = 1) -> None:
        if amount:
            counts[tag] = counts.get(tag, 0) + amount

    for word in _HEURISTIC_WORD_RE.findall(text):
        bump(_HEURISTIC_WORDS[word])
    bump(KnowledgeTag.COMPARISON, len(_COMPARISON_RE.findall(text)))
    for line in text.split("\n"):
        if _SWAP_LINE_RE.search(line):
            bump(KnowledgeTag.SWAP)
        elif _PLAIN_ASSIGN_RE.search(line):
            bump(KnowledgeTag.ASSIGNMENT)
    return counts


def plan_coverage(plan: SubtaskPlan, candidate_source: str) -> float:
    """Fraction of the plan's knowledge tags (with multiplicity) present in a candidate.

    Parses the candidate when possible, otherwise falls back to a token-level
    keyword heuristic.
    """
    if len(plan) == 0:
        raise ValueError("plan must be non-empty")
    plan_counts = plan.tag_counts()
    try:
        candidate_counts = _ast_tag_counts(parse_source(candidate_source))
    except (LexError, ParseSyntaxError):
        candidate_counts = _heuristic_tag_counts(candidate_source)
    total = sum(plan_counts.values())
    matched = sum(
        min(count, candidate_counts.get(tag, 0)) for tag, count in plan_counts.items()
    )
    return matched / total
