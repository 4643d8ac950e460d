"""Programs: parsing, canonical rendering, line partitions and slot edits.

Concrete syntax is Python-like (a ``def`` header, colon blocks, 4-space
canonical indentation).  A program is the pair of its AST and the ordered
partition of that AST into editable line slots: each ``if``/``elif``/``while``
header exposes its condition, each leaf assignment is wholly editable, and
the ``def``/``return`` scaffold is fixed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .grammar import (
    Ast,
    CONDITION_ROOT_TAGS,
    EXPR_ROOT_TAGS,
    STATEMENT_ROOT_TAGS,
    ast_size,
    is_condition_fragment,
    is_statement_fragment,
    seq as make_seq,
    walk,
)

GAMES = "games"
GENERAL = "general"

SLOT_CONDITION = "condition"
SLOT_STATEMENT = "simple-statement"

_KEYWORDS = frozenset({"def", "if", "elif", "else", "while", "return", "and", "or"})
_FUNCS = frozenset({"pow", "sqrt", "log", "abs"})

_TOKEN_RE = re.compile(
    r"(?P<num>\d+\.\d*|\.\d+|\d+)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op><=|>=|==|!=|[-+*/()\[\]=:,<>])"
    r"|(?P<ws>[ \t]+)"
    r"|(?P<bad>.)"
)

_OP2TAG = {"+": "add", "-": "sub", "*": "mul", "/": "div"}
_CMP2TAG = {"<": "lt", "<=": "le", "!=": "ne", "==": "eq", ">=": "ge", ">": "gt"}
_TAG2OP = {
    "and": "and", "or": "or",
    "lt": "<", "le": "<=", "ne": "!=", "eq": "==", "ge": ">=", "gt": ">",
    "add": "+", "sub": "-", "mul": "*", "div": "/",
}

_PREC_OR = 1
_PREC_AND = 2
_PREC_CMP = 3
_PREC_ADD = 4
_PREC_MUL = 5
_PREC_NEG = 6
_PREC_ATOM = 7

_PREC = {
    "or": _PREC_OR, "and": _PREC_AND,
    "lt": _PREC_CMP, "le": _PREC_CMP, "ne": _PREC_CMP,
    "eq": _PREC_CMP, "ge": _PREC_CMP, "gt": _PREC_CMP,
    "add": _PREC_ADD, "sub": _PREC_ADD,
    "mul": _PREC_MUL, "div": _PREC_MUL,
    "neg": _PREC_NEG,
}


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f" (line {line}" + (f", col {col}" if col else "") + ")" if line else ""
        super().__init__(message + where)


class SlotError(ValueError):
    """Raised on invalid slot replacement (bad path or fragment type)."""


@dataclass(frozen=True)
class Dialect:
    kind: str
    obs_dim: int = 12
    n_actions: int = 5
    fn_name: str = "heuristic"
    params: tuple[str, ...] = ("o",)
    arrays: tuple[str, ...] = ()
    returns: tuple[str, ...] = ("action",)

    @property
    def obs_name(self) -> str:
        return self.params[0]

    @property
    def scalars(self) -> tuple[str, ...]:
        return tuple(p for p in self.params if p not in self.arrays)


@dataclass(frozen=True)
class Program:
    dialect: Dialect
    root: Ast  # the statement body; def/return scaffold lives in the dialect


@dataclass(frozen=True)
class LineSlot:
    path: tuple[int, ...]
    kind: str  # SLOT_CONDITION | SLOT_STATEMENT
    indent: int
    line_no: int

    @property
    def slot_id(self) -> str:
        return f"{self.line_no}:{self.kind}"


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Tok:
    kind: str  # "num" | "name" | "op" | "end"
    text: str
    col: int


def _tokenize_line(text: str, lineno: int) -> list[_Tok]:
    toks: list[_Tok] = []
    for m in _TOKEN_RE.finditer(text):
        kind = m.lastgroup
        if kind == "ws":
            continue
        if kind == "bad":
            raise ParseError(f"unexpected character {m.group()!r}", lineno, m.start() + 1)
        toks.append(_Tok(kind, m.group(), m.start() + 1))
    toks.append(_Tok("end", "", len(text) + 1))
    return toks


@dataclass
class _Line:
    lineno: int
    indent: int
    toks: list[_Tok]

    def head(self) -> str:
        return self.toks[0].text if self.toks[0].kind != "end" else ""


def _split_lines(text: str) -> list[_Line]:
    lines: list[_Line] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if "#" in raw:
            raise ParseError("comments are not part of the language", lineno, raw.index("#") + 1)
        stripped = raw.rstrip()
        if not stripped.strip():
            continue
        body = stripped.lstrip(" ")
        indent = len(stripped) - len(body)
        if body.startswith("\t") or "\t" in stripped[:indent + 1]:
            raise ParseError("tab indentation is not allowed", lineno, 1)
        lines.append(_Line(lineno, indent, _tokenize_line(body, lineno)))
    return lines


# ---------------------------------------------------------------------------
# Expression parsing
# ---------------------------------------------------------------------------

class _ExprParser:
    def __init__(self, parser: "_ProgramParser", line: _Line):
        self.p = parser
        self.line = line
        self.toks = line.toks
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t.text != text:
            raise ParseError(f"expected {text!r}", self.line.lineno, t.col)
        return self.next()

    def error(self, msg: str) -> ParseError:
        return ParseError(msg, self.line.lineno, self.peek().col)

    # condition grammar: or > and > comparison > arithmetic
    def parse_condition(self) -> Ast:
        node = self.parse_and()
        while self.peek().text == "or":
            self.next()
            node = Ast("or", children=(node, self.parse_and()))
        return node

    def parse_and(self) -> Ast:
        node = self.parse_cmp()
        while self.peek().text == "and":
            self.next()
            node = Ast("and", children=(node, self.parse_cmp()))
        return node

    def parse_cmp(self) -> Ast:
        node = self.parse_add()
        t = self.peek()
        if t.kind == "op" and t.text in _CMP2TAG:
            self.next()
            rhs = self.parse_add()
            node = Ast(_CMP2TAG[t.text], children=(node, rhs))
            t2 = self.peek()
            if t2.kind == "op" and t2.text in _CMP2TAG:
                raise ParseError("chained comparisons are not supported",
                                 self.line.lineno, t2.col)
        return node

    def parse_add(self) -> Ast:
        node = self.parse_mul()
        while self.peek().text in ("+", "-"):
            op = self.next().text
            node = Ast(_OP2TAG[op], children=(node, self.parse_mul()))
        return node

    def parse_mul(self) -> Ast:
        node = self.parse_unary()
        while self.peek().text in ("*", "/"):
            op = self.next().text
            node = Ast(_OP2TAG[op], children=(node, self.parse_unary()))
        return node

    def parse_unary(self) -> Ast:
        t = self.peek()
        if t.text == "-":
            self.next()
            operand = self.parse_unary()
            if operand.prod == "num":
                return Ast("num", payload=-operand.payload)
            return Ast("neg", children=(operand,))
        return self.parse_atom()

    def parse_atom(self) -> Ast:
        t = self.peek()
        if t.kind == "num":
            self.next()
            return Ast("num", payload=float(t.text))
        if t.text == "(":
            self.next()
            node = self.parse_condition()
            self.expect(")")
            return node
        if t.kind == "name":
            name = t.text
            if name in _FUNCS:
                return self.parse_call(name)
            if name in _KEYWORDS:
                raise self.error(f"unexpected keyword {name!r}")
            self.next()
            if self.peek().text == "[":
                self.next()
                d = self.p.dialect_kind
                if d == GAMES and name == self.p.obs_name:
                    idx_tok = self.peek()
                    if idx_tok.kind != "num" or "." in idx_tok.text:
                        raise ParseError("observation index must be an integer literal",
                                         self.line.lineno, idx_tok.col)
                    idx = int(idx_tok.text)
                    if not 0 <= idx < self.p.obs_dim:
                        raise ParseError(
                            f"observation index {idx} out of range [0, {self.p.obs_dim})",
                            self.line.lineno, idx_tok.col)
                    self.next()
                    self.expect("]")
                    return Ast("obs", payload=idx)
                if d == GENERAL and name in self.p.array_params:
                    idx = self.parse_add()
                    self.expect("]")
                    return Ast("arr-index", children=(idx,), payload=name)
                raise ParseError(f"{name!r} is not subscriptable", self.line.lineno, t.col)
            return self.p.resolve_name(name, self.line.lineno, t.col)
        raise self.error("expected an expression")

    def parse_call(self, fn: str) -> Ast:
        tok = self.next()
        self.expect("(")
        first = self.parse_add()
        if fn == "pow":
            self.expect(",")
            second = self.parse_add()
            self.expect(")")
            return Ast("pow", children=(first, second))
        self.expect(")")
        if fn == "abs":
            return Ast("abs", children=(first,))
        return Ast(fn, children=(first,))

    def at_end(self) -> bool:
        return self.peek().kind == "end"


def _contains_bool_ops(node: Ast) -> bool:
    return any(n.prod in CONDITION_ROOT_TAGS for n in walk(node))


def _validate_condition_shape(node: Ast, lineno: int) -> None:
    """Comparisons combine arithmetic operands; and/or combine conditions."""
    tag = node.prod
    if tag in ("and", "or"):
        _validate_condition_shape(node.children[0], lineno)
        _validate_condition_shape(node.children[1], lineno)
        return
    if tag in CONDITION_ROOT_TAGS:  # a comparison
        for child in node.children:
            if _contains_bool_ops(child):
                raise ParseError("comparison operands must be arithmetic expressions", lineno)
        return
    if _contains_bool_ops(node):
        raise ParseError("boolean operators cannot appear inside arithmetic expressions", lineno)


# ---------------------------------------------------------------------------
# Program parsing
# ---------------------------------------------------------------------------

class _ProgramParser:
    def __init__(self, dialect_kind: str, obs_dim: int, n_actions: int):
        self.dialect_kind = dialect_kind
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.obs_name = "o"
        self.params: tuple[str, ...] = ()
        self.array_params: frozenset[str] = frozenset()
        self.defined_vars: set[str] = set()
        self.lines: list[_Line] = []
        self.pos = 0

    def resolve_name(self, name: str, lineno: int, col: int) -> Ast:
        if self.dialect_kind == GAMES:
            if name == self.obs_name:
                raise ParseError("the observation vector can only be used as o[i]", lineno, col)
            if name == "action":
                raise ParseError("'action' cannot be read as a value", lineno, col)
        else:
            if name in self.array_params:
                raise ParseError(f"array {name!r} can only be used as {name}[i]", lineno, col)
            if name in self.params:
                return Ast("var", payload=name)
        if name not in self.defined_vars:
            raise ParseError(f"unknown identifier {name!r}", lineno, col)
        return Ast("var", payload=name)

    # -- header / scaffold ---------------------------------------------------

    def parse(self, text: str) -> Program:
        self.lines = _split_lines(text)
        if not self.lines:
            raise ParseError("empty program", 1)
        header = self.lines[0]
        if header.indent != 0:
            raise ParseError("the def header must not be indented", header.lineno, 1)
        fn_name = self._parse_def(header)
        if self.dialect_kind == GENERAL:
            self._scan_array_usage()
        self.pos = 1
        if self.pos >= len(self.lines):
            raise ParseError("missing function body", header.lineno)
        body_indent = self.lines[self.pos].indent
        if body_indent <= 0:
            raise ParseError("function body must be indented", self.lines[self.pos].lineno, 1)
        body = self._parse_block(body_indent, allow_return_stop=True)
        if body is None:
            raise ParseError("function body cannot be just a return", self.lines[self.pos].lineno)
        returns = self._parse_return(body_indent)
        if self.pos != len(self.lines):
            extra = self.lines[self.pos]
            raise ParseError("unexpected code after return", extra.lineno, 1)
        dialect = Dialect(
            kind=self.dialect_kind,
            obs_dim=self.obs_dim,
            n_actions=self.n_actions,
            fn_name=fn_name,
            params=self.params,
            arrays=tuple(p for p in self.params if p in self.array_params),
            returns=returns,
        )
        return Program(dialect=dialect, root=body)

    def _parse_def(self, line: _Line) -> str:
        ep = _ExprParser(self, line)
        if ep.peek().text != "def":
            raise ParseError("program must start with a def header", line.lineno, 1)
        ep.next()
        name_tok = ep.next()
        if name_tok.kind != "name" or name_tok.text in _KEYWORDS:
            raise ParseError("expected a function name", line.lineno, name_tok.col)
        ep.expect("(")
        params: list[str] = []
        while True:
            t = ep.next()
            if t.kind != "name" or t.text in _KEYWORDS or t.text in _FUNCS:
                raise ParseError("expected a parameter name", line.lineno, t.col)
            if t.text in params:
                raise ParseError(f"duplicate parameter {t.text!r}", line.lineno, t.col)
            params.append(t.text)
            nxt = ep.next()
            if nxt.text == ")":
                break
            if nxt.text != ",":
                raise ParseError("expected ',' or ')'", line.lineno, nxt.col)
        ep.expect(":")
        if not ep.at_end():
            raise ParseError("the def header must end after ':'", line.lineno, ep.peek().col)
        if self.dialect_kind == GAMES:
            if len(params) != 1:
                raise ParseError("policy programs take exactly one observation parameter",
                                 line.lineno)
            self.obs_name = params[0]
        self.params = tuple(params)
        return name_tok.text

    def _scan_array_usage(self) -> None:
        arrays = set()
        for line in self.lines[1:]:
            toks = line.toks
            for i, t in enumerate(toks[:-1]):
                if t.kind == "name" and t.text in self.params and toks[i + 1].text == "[":
                    arrays.add(t.text)
        self.array_params = frozenset(arrays)

    def _parse_return(self, body_indent: int) -> tuple[str, ...]:
        if self.pos >= len(self.lines):
            raise ParseError("missing return line", self.lines[-1].lineno)
        line = self.lines[self.pos]
        if line.head() != "return":
            raise ParseError("expected the return line", line.lineno, 1)
        if line.indent != body_indent:
            raise ParseError("return must be at function-body indentation", line.lineno, 1)
        self.pos += 1
        toks = line.toks[1:]
        names: list[str] = []
        expect_name = True
        for t in toks:
            if t.kind == "end":
                break
            if expect_name:
                if t.kind != "name":
                    raise ParseError("return takes a list of names", line.lineno, t.col)
                names.append(t.text)
                expect_name = False
            else:
                if t.text != ",":
                    raise ParseError("expected ','", line.lineno, t.col)
                expect_name = True
        if expect_name:
            raise ParseError("return needs at least one name", line.lineno)
        if self.dialect_kind == GAMES:
            if names != ["action"]:
                raise ParseError("policy programs must end with 'return action'", line.lineno)
        else:
            for n in names:
                if n not in self.params:
                    raise ParseError(f"return of non-parameter {n!r}", line.lineno)
        return tuple(names)

    # -- statements ------------------------------------------------------------

    def _parse_block(self, indent: int, allow_return_stop: bool = False) -> Optional[Ast]:
        stmts: list[Ast] = []
        while self.pos < len(self.lines):
            line = self.lines[self.pos]
            if line.indent < indent:
                break
            if line.indent > indent:
                raise ParseError("unexpected indent", line.lineno, 1)
            head = line.head()
            if head == "return":
                if allow_return_stop:
                    break
                raise ParseError("return is only allowed at the end of the function",
                                 line.lineno, 1)
            if head in ("elif", "else"):
                break
            stmts.append(self._parse_statement(line, indent))
        if not stmts:
            return None
        return make_seq(*stmts)

    def _require_block(self, indent: int, lineno: int) -> Ast:
        if self.pos >= len(self.lines) or self.lines[self.pos].indent <= indent:
            raise ParseError("expected an indented block", lineno)
        inner = self.lines[self.pos].indent
        block = self._parse_block(inner)
        if block is None:
            raise ParseError("expected an indented block", lineno)
        return block

    def _parse_statement(self, line: _Line, indent: int) -> Ast:
        head = line.head()
        if head == "while":
            if self.dialect_kind == GAMES:
                raise ParseError("construct not in dialect: while", line.lineno, 1)
            self.pos += 1
            cond = self._parse_header_condition(line, "while")
            body = self._require_block(indent, line.lineno)
            return Ast("while", children=(cond, body))
        if head == "if":
            return self._parse_if(line, indent)
        if head == "def":
            raise ParseError("nested function definitions are not allowed", line.lineno, 1)
        return self._parse_assignment(line)

    def _parse_header_condition(self, line: _Line, keyword: str) -> Ast:
        ep = _ExprParser(self, line)
        ep.expect(keyword)
        cond = ep.parse_condition()
        ep.expect(":")
        if not ep.at_end():
            raise ParseError("header must end after ':'", line.lineno, ep.peek().col)
        _validate_condition_shape(cond, line.lineno)
        return cond

    def _parse_if(self, line: _Line, indent: int) -> Ast:
        self.pos += 1
        cond = self._parse_header_condition(line, "if")
        then_block = self._require_block(indent, line.lineno)
        elif_cond = elif_block = None
        else_block = None
        if self.pos < len(self.lines) and self.lines[self.pos].indent == indent \
                and self.lines[self.pos].head() == "elif":
            eline = self.lines[self.pos]
            self.pos += 1
            elif_cond = self._parse_header_condition(eline, "elif")
            elif_block = self._require_block(indent, eline.lineno)
            if self.pos < len(self.lines) and self.lines[self.pos].indent == indent \
                    and self.lines[self.pos].head() == "elif":
                raise ParseError("at most one elif block is supported",
                                 self.lines[self.pos].lineno, 1)
        if self.pos < len(self.lines) and self.lines[self.pos].indent == indent \
                and self.lines[self.pos].head() == "else":
            eline = self.lines[self.pos]
            ep = _ExprParser(self, eline)
            ep.expect("else")
            ep.expect(":")
            if not ep.at_end():
                raise ParseError("else must end after ':'", eline.lineno, ep.peek().col)
            self.pos += 1
            else_block = self._require_block(indent, eline.lineno)

        if elif_cond is not None and else_block is not None:
            return Ast("if-elif-else",
                       children=(cond, then_block, elif_cond, elif_block, else_block))
        if elif_cond is not None:
            if self.dialect_kind == GAMES:
                raise ParseError("construct not in dialect: if/elif without else", line.lineno, 1)
            return Ast("if-elif", children=(cond, then_block, elif_cond, elif_block))
        if else_block is not None:
            return Ast("if-else", children=(cond, then_block, else_block))
        if self.dialect_kind == GAMES:
            raise ParseError("construct not in dialect: if without else", line.lineno, 1)
        return Ast("if", children=(cond, then_block))

    def _parse_assignment(self, line: _Line) -> Ast:
        self.pos += 1
        ep = _ExprParser(self, line)
        target = ep.next()
        if target.kind != "name" or target.text in _KEYWORDS or target.text in _FUNCS:
            raise ParseError("expected a statement", line.lineno, target.col)
        name = target.text
        index_expr = None
        if ep.peek().text == "[":
            if self.dialect_kind == GAMES:
                raise ParseError("construct not in dialect: array assignment", line.lineno, 1)
            if name not in self.array_params:
                raise ParseError(f"{name!r} is not an array parameter", line.lineno, target.col)
            ep.next()
            index_expr = ep.parse_add()
            ep.expect("]")
        ep.expect("=")
        if self.dialect_kind == GAMES and name == "action" and index_expr is None:
            t = ep.peek()
            neg = False
            if t.text == "-":
                ep.next()
                neg = True
                t = ep.peek()
            if t.kind != "num" or "." in t.text:
                raise ParseError("action must be assigned an action index", line.lineno, t.col)
            idx = -int(t.text) if neg else int(t.text)
            if not 0 <= idx < self.n_actions:
                raise ParseError(f"action index {idx} out of range [0, {self.n_actions})",
                                 line.lineno, t.col)
            ep.next()
            if not ep.at_end():
                raise ParseError("unexpected tokens after action assignment",
                                 line.lineno, ep.peek().col)
            return Ast("action-assign", payload=idx)
        value = ep.parse_condition()
        if not ep.at_end():
            raise ParseError("unexpected tokens after expression", line.lineno, ep.peek().col)
        if _contains_bool_ops(value):
            raise ParseError("boolean expressions cannot be assigned", line.lineno, 1)
        if index_expr is not None:
            if _contains_bool_ops(index_expr):
                raise ParseError("boolean expressions cannot index arrays", line.lineno, 1)
            return Ast("arr-assign", children=(index_expr, value), payload=name)
        if name == self.obs_name and self.dialect_kind == GAMES:
            raise ParseError("cannot assign to the observation parameter", line.lineno, 1)
        if self.dialect_kind == GENERAL and name in self.array_params:
            raise ParseError(f"cannot rebind array parameter {name!r}", line.lineno, 1)
        self.defined_vars.add(name)
        return Ast("var-def", children=(value,), payload=name)


def parse_program(text: str, dialect: str = GAMES, *,
                  obs_dim: int = 12, n_actions: int = 5) -> Program:
    """Parse source text into a line-partitioned program."""
    if dialect not in (GAMES, GENERAL):
        raise ValueError(f"unknown dialect {dialect!r}")
    return _ProgramParser(dialect, obs_dim, n_actions).parse(text)


# ---------------------------------------------------------------------------
# Rendering and the line partition
# ---------------------------------------------------------------------------

def format_number(value: float) -> str:
    v = float(value)
    if v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def render_expr(node: Ast, parent_prec: int = 0, right_side: bool = False,
                obs_name: str = "o") -> str:
    tag = node.prod
    if tag == "num":
        return format_number(node.payload)
    if tag == "obs":
        return f"{obs_name}[{node.payload}]"
    if tag == "var":
        return str(node.payload)
    if tag == "arr-index":
        return f"{node.payload}[{render_expr(node.children[0], obs_name=obs_name)}]"
    if tag == "hole":
        raise ValueError("cannot render a constant hole; instantiate it first")
    if tag in ("sqrt", "log", "abs"):
        return f"{tag}({render_expr(node.children[0], obs_name=obs_name)})"
    if tag == "pow":
        return (f"pow({render_expr(node.children[0], obs_name=obs_name)}, "
                f"{render_expr(node.children[1], obs_name=obs_name)})")
    if tag == "neg":
        inner = render_expr(node.children[0], _PREC_NEG, obs_name=obs_name)
        return f"-{inner}"
    prec = _PREC[tag]
    text = f"{render_expr(node.children[0], prec, False, obs_name)} {_TAG2OP[tag]} " \
           f"{render_expr(node.children[1], prec, True, obs_name)}"
    if prec < parent_prec or (prec == parent_prec
                              and (right_side or prec == _PREC_CMP)):
        return f"({text})"
    return text


@dataclass(frozen=True)
class _Row:
    line_no: int
    text: str
    slot: Optional[LineSlot]


def _layout(program: Program) -> list[_Row]:
    rows: list[_Row] = []
    obs_name = program.dialect.obs_name if program.dialect.kind == GAMES else "o"

    def expr_text(node: Ast) -> str:
        return render_expr(node, obs_name=obs_name)

    def add(text: str, indent: int, slot: Optional[tuple[tuple[int, ...], str]]) -> None:
        line_no = len(rows) + 1
        s = None
        if slot is not None:
            s = LineSlot(path=slot[0], kind=slot[1], indent=indent, line_no=line_no)
        rows.append(_Row(line_no, "    " * indent + text, s))

    def stmt(node: Ast, path: tuple[int, ...], indent: int) -> None:
        tag = node.prod
        if tag == "seq":
            stmt(node.children[0], path + (0,), indent)
            stmt(node.children[1], path + (1,), indent)
        elif tag == "var-def":
            add(f"{node.payload} = {expr_text(node.children[0])}", indent,
                (path, SLOT_STATEMENT))
        elif tag == "action-assign":
            add(f"action = {node.payload}", indent, (path, SLOT_STATEMENT))
        elif tag == "arr-assign":
            add(f"{node.payload}[{expr_text(node.children[0])}] = "
                f"{expr_text(node.children[1])}", indent, (path, SLOT_STATEMENT))
        elif tag == "while":
            add(f"while {expr_text(node.children[0])}:", indent, (path + (0,), SLOT_CONDITION))
            stmt(node.children[1], path + (1,), indent + 1)
        elif tag == "if":
            add(f"if {expr_text(node.children[0])}:", indent, (path + (0,), SLOT_CONDITION))
            stmt(node.children[1], path + (1,), indent + 1)
        elif tag == "if-else":
            add(f"if {expr_text(node.children[0])}:", indent, (path + (0,), SLOT_CONDITION))
            stmt(node.children[1], path + (1,), indent + 1)
            add("else:", indent, None)
            stmt(node.children[2], path + (2,), indent + 1)
        elif tag == "if-elif":
            add(f"if {expr_text(node.children[0])}:", indent, (path + (0,), SLOT_CONDITION))
            stmt(node.children[1], path + (1,), indent + 1)
            add(f"elif {expr_text(node.children[2])}:", indent, (path + (2,), SLOT_CONDITION))
            stmt(node.children[3], path + (3,), indent + 1)
        elif tag == "if-elif-else":
            add(f"if {expr_text(node.children[0])}:", indent, (path + (0,), SLOT_CONDITION))
            stmt(node.children[1], path + (1,), indent + 1)
            add(f"elif {expr_text(node.children[2])}:", indent, (path + (2,), SLOT_CONDITION))
            stmt(node.children[3], path + (3,), indent + 1)
            add("else:", indent, None)
            stmt(node.children[4], path + (4,), indent + 1)
        else:
            raise ValueError(f"not a statement node: {tag}")

    d = program.dialect
    add(f"def {d.fn_name}({', '.join(d.params)}):", 0, None)
    stmt(program.root, (), 1)
    add(f"return {', '.join(d.returns)}", 1, None)
    return rows


def render(program: Program) -> str:
    """Deterministic canonical source text (4-space indents, one stmt/line)."""
    return "\n".join(row.text for row in _layout(program)) + "\n"


def line_slots(program: Program) -> list[LineSlot]:
    """Editable slots in source order; scaffold and ``else`` lines yield none."""
    return [row.slot for row in _layout(program) if row.slot is not None]


def physical_line_count(program: Program) -> int:
    return len(_layout(program))


# ---------------------------------------------------------------------------
# Slot replacement
# ---------------------------------------------------------------------------

def _subtree_at(root: Ast, path: tuple[int, ...]) -> Ast:
    node = root
    for idx in path:
        if idx >= len(node.children):
            raise SlotError(f"invalid slot path {path}")
        node = node.children[idx]
    return node


def _replace_at(root: Ast, path: tuple[int, ...], new: Ast) -> Ast:
    if not path:
        return new
    idx = path[0]
    if idx >= len(root.children):
        raise SlotError(f"invalid slot path {path}")
    children = list(root.children)
    children[idx] = _replace_at(children[idx], path[1:], new)
    return Ast(root.prod, children=tuple(children), payload=root.payload)


def _normalize_seqs(node: Ast) -> Ast:
    if node.prod == "seq":
        parts: list[Ast] = []
        work = [node]
        while work:
            n = work.pop(0)
            if n.prod == "seq":
                work = list(n.children) + work
            else:
                parts.append(_normalize_seqs(n))
        return make_seq(*parts)
    if node.children:
        return Ast(node.prod,
                   children=tuple(_normalize_seqs(c) for c in node.children),
                   payload=node.payload)
    return node


def validate_fragment(program: Program, fragment: Ast, kind: str) -> None:
    d = program.dialect
    if kind == SLOT_CONDITION:
        if not is_condition_fragment(fragment):
            raise SlotError("fragment is not condition-rooted")
    elif kind == SLOT_STATEMENT:
        if not is_statement_fragment(fragment):
            raise SlotError("fragment is not statement-rooted")
    else:
        raise SlotError(f"unknown slot kind {kind!r}")
    for n in walk(fragment):
        tag = n.prod
        if d.kind == GAMES:
            if tag in ("while", "if", "if-elif", "arr-assign", "arr-index"):
                raise SlotError(f"construct not in dialect: {tag}")
            if tag == "obs" and not 0 <= n.payload < d.obs_dim:
                raise SlotError(f"observation index {n.payload} out of range")
            if tag == "action-assign" and not 0 <= n.payload < d.n_actions:
                raise SlotError(f"action index {n.payload} out of range")
        else:
            if tag in ("obs", "action-assign"):
                raise SlotError(f"construct not in dialect: {tag}")
            if tag in ("arr-index", "arr-assign") and n.payload not in d.arrays:
                raise SlotError(f"unknown array {n.payload!r}")


def replace_slot(program: Program, slot: LineSlot, fragment: Ast) -> Program:
    """Replace the slot's subtree, recomputing the line partition.

    Statement fragments may be multi-line (sequences or nested blocks), so
    the physical line count of the result may differ from the input.
    """
    validate_fragment(program, fragment, slot.kind)
    current = _subtree_at(program.root, slot.path)  # also validates the path
    if slot.kind == SLOT_CONDITION and not is_condition_fragment(current):
        raise SlotError("slot path does not point at a condition")
    if slot.kind == SLOT_STATEMENT and current.prod not in (
            "var-def", "action-assign", "arr-assign"):
        raise SlotError("slot path does not point at a simple statement")
    new_root = _normalize_seqs(_replace_at(program.root, slot.path, fragment))
    return Program(dialect=program.dialect, root=new_root)


def program_vars(program: Program) -> list[str]:
    """Variable names defined by the program, in first-definition order."""
    names: list[str] = []
    for node in walk(program.root):
        if node.prod == "var-def" and node.payload not in names:
            names.append(node.payload)
    return names


def read_vars(program: Program) -> set[str]:
    """Names the program ever reads (var references anywhere)."""
    return {n.payload for n in walk(program.root) if n.prod == "var"}
