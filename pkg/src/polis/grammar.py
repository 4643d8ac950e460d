"""Context-free grammars and the AST representation shared by all dialects.

A grammar is a plain list of productions.  The two program dialects (the
"games" policy language and the "general" array/loop language) are built as
grammar instances whose production ids double as AST node tags; toy grammars
for synthesizer tests can be loaded from a small line-oriented file format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

# Production kind tags.  The interpreter, renderer and enumerator all dispatch
# on these.
K_SEQ = "statement-seq"
K_IF = "if"
K_IF_ELSE = "if-else"
K_IF_ELIF = "if-elif"
K_IF_ELIF_ELSE = "if-elif-else"
K_WHILE = "while"
K_VAR_DEF = "var-def"
K_ACTION_ASSIGN = "action-assign"
K_ARRAY_ASSIGN = "array-assign"
K_BINOP = "binop"
K_UNOP = "unop"
K_LITERAL = "literal-slot"
K_OBS = "obs-index"
K_ARRAY_INDEX = "array-index"
K_VAR_REF = "var-ref"
K_CONST_HOLE = "const-hole"
K_UNIT = "unit"
K_GENERIC = "generic"

STATEMENT_KINDS = frozenset(
    {K_SEQ, K_IF, K_IF_ELSE, K_IF_ELIF, K_IF_ELIF_ELSE, K_WHILE,
     K_VAR_DEF, K_ACTION_ASSIGN, K_ARRAY_ASSIGN}
)
BOOL_OPS = ("and", "or")
CMP_OPS = ("<", "<=", "!=", "==", ">=", ">")
ARITH_OPS = ("+", "-", "*", "/")

# Extra variable names the synthesizer may introduce beyond those already
# present in the input program.
SYNTH_VAR_POOL = ("v1", "v2", "v3", "v4")


class GrammarError(ValueError):
    """Raised for malformed grammars or grammar files."""


@dataclass(frozen=True)
class Production:
    """One production rule.

    ``rhs`` lists grammar symbols; every nonterminal in it becomes a child
    slot of the produced AST node.  ``payloads``, when set, enumerates the
    concrete literal attachments of this production (observation indices,
    action indices, variable names, array names); the enumerator emits one
    fragment per payload value.
    """

    id: str
    lhs: str
    rhs: tuple[str, ...]
    kind: str = K_GENERIC
    op: Optional[str] = None
    payloads: Optional[tuple] = None

    def child_symbols(self, nonterminals: frozenset[str]) -> tuple[str, ...]:
        return tuple(s for s in self.rhs if s in nonterminals)

    @property
    def is_unit(self) -> bool:
        return self.kind == K_UNIT


@dataclass(frozen=True)
class Grammar:
    nonterminals: frozenset[str]
    terminals: frozenset[str]
    productions: tuple[Production, ...]
    start: str

    def __post_init__(self) -> None:
        if self.start not in self.nonterminals:
            raise GrammarError(f"start symbol {self.start!r} is not a nonterminal")
        for prod in self.productions:
            if prod.lhs not in self.nonterminals:
                raise GrammarError(f"production {prod.id}: lhs {prod.lhs!r} is not a nonterminal")
            for sym in prod.rhs:
                if sym not in self.nonterminals and sym not in self.terminals:
                    raise GrammarError(f"production {prod.id}: unknown symbol {sym!r}")

    def productions_for(self, lhs: str) -> tuple[Production, ...]:
        return tuple(p for p in self.productions if p.lhs == lhs)

    def production(self, prod_id: str) -> Production:
        for p in self.productions:
            if p.id == prod_id:
                return p
        raise KeyError(prod_id)

    def child_count(self, prod: Production) -> int:
        return len(prod.child_symbols(self.nonterminals))


@dataclass(frozen=True, slots=True)
class Ast:
    """An AST node: a production id, ordered children and an optional payload.

    For dialect trees the production id is a stable tag such as ``"add"`` or
    ``"if-else"``; payloads carry literals (numbers, observation/action
    indices, variable and array names, operator-free).
    """

    prod: str
    children: tuple["Ast", ...] = ()
    payload: object = None


def ast_size(node: Ast) -> int:
    """Total node count of the tree (the node itself plus all descendants)."""
    total = 0
    stack = [node]
    while stack:
        n = stack.pop()
        total += 1
        stack.extend(n.children)
    return total


def walk(node: Ast) -> Iterable[Ast]:
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def count_holes(node: Ast) -> int:
    return sum(1 for n in walk(node) if n.prod == "hole")


# ---------------------------------------------------------------------------
# Grammar files (used for toy fixtures like the 3-symbol example grammar).
# ---------------------------------------------------------------------------

def load_grammar_text(text: str) -> Grammar:
    """Parse a line-oriented grammar: one ``LHS -> sym sym ...`` per line.

    Symbols are whitespace-separated tokens; any symbol that appears on a
    left-hand side is a nonterminal, everything else is a terminal.  The
    first left-hand side is the start symbol.  Blank lines and ``#`` comments
    are skipped.
    """
    rules: list[tuple[str, tuple[str, ...]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise GrammarError(f"line {lineno}: expected 'LHS -> rhs'")
        lhs, rhs = line.split("->", 1)
        lhs = lhs.strip()
        if not lhs or " " in lhs:
            raise GrammarError(f"line {lineno}: bad left-hand side {lhs!r}")
        rules.append((lhs, tuple(rhs.split())))
    if not rules:
        raise GrammarError("empty grammar")

    nonterminals = frozenset(lhs for lhs, _ in rules)
    terminals = frozenset(s for _, rhs in rules for s in rhs if s not in nonterminals)
    counters: dict[str, int] = {}
    productions = []
    for lhs, rhs in rules:
        idx = counters.get(lhs, 0)
        counters[lhs] = idx + 1
        nt_children = tuple(s for s in rhs if s in nonterminals)
        if len(rhs) == 1 and rhs[0] in nonterminals:
            kind = K_UNIT
        elif nt_children:
            kind = K_GENERIC
        else:
            kind = K_LITERAL
        productions.append(Production(id=f"{lhs}.{idx}", lhs=lhs, rhs=rhs, kind=kind))
    return Grammar(
        nonterminals=nonterminals,
        terminals=terminals,
        productions=tuple(productions),
        start=rules[0][0],
    )


def load_grammar_file(path) -> Grammar:
    with open(path, "r", encoding="utf-8") as fh:
        return load_grammar_text(fh.read())


# ---------------------------------------------------------------------------
# The two program dialects.
# ---------------------------------------------------------------------------

def _expr_productions(leaf_productions: Sequence[Production]) -> list[Production]:
    prods = list(leaf_productions)
    prods.append(Production("hole", "E", ("n",), K_CONST_HOLE))
    for op, pid in zip(ARITH_OPS, ("add", "sub", "mul", "div")):
        prods.append(Production(pid, "E", ("E", op, "E"), K_BINOP, op=op))
    prods.append(Production("pow", "E", ("pow", "(", "E", ",", "E", ")"), K_BINOP, op="pow"))
    for fn in ("sqrt", "log"):
        prods.append(Production(fn, "E", (fn, "(", "E", ")"), K_UNOP, op=fn))
    prods.append(Production("neg", "E", ("-", "(", "E", ")"), K_UNOP, op="neg"))
    prods.append(Production("abs", "E", ("abs", "(", "E", ")"), K_UNOP, op="abs"))
    return prods


def _condition_productions() -> list[Production]:
    prods = [
        Production("and", "C", ("C", "and", "C"), K_BINOP, op="and"),
        Production("or", "C", ("C", "or", "C"), K_BINOP, op="or"),
    ]
    for op, pid in zip(CMP_OPS, ("lt", "le", "ne", "eq", "ge", "gt")):
        prods.append(Production(pid, "C", ("E", op, "E"), K_BINOP, op=op))
    prods.append(Production("cond-expr", "C", ("E",), K_UNIT))
    return prods


def games_grammar(obs_dim: int, n_actions: int, var_names: Sequence[str]) -> Grammar:
    """Policy-language grammar: straight-line code with nested conditionals.

    Simple statements come before block statements so enumeration visits
    minimal edits first within each size class.
    """
    var_pool = tuple(var_names)
    productions: list[Production] = [
        Production("action-assign", "S", ("action", "=", "a"), K_ACTION_ASSIGN,
                   payloads=tuple(range(n_actions))),
        Production("var-def", "S", ("v", "=", "E"), K_VAR_DEF, payloads=var_pool),
        Production("if-else", "S", ("if", "(", "C", ")", ":", "S", "else", ":", "S"), K_IF_ELSE),
        Production(
            "if-elif-else", "S",
            ("if", "(", "C", ")", ":", "S", "elif", "(", "C", ")", ":", "S", "else", ":", "S"),
            K_IF_ELIF_ELSE,
        ),
        Production("seq", "S", ("S", "S"), K_SEQ),
    ]
    productions.extend(_condition_productions())
    leaf = [
        Production("obs", "E", ("o",), K_OBS, payloads=tuple(range(obs_dim))),
        Production("var", "E", ("v",), K_VAR_REF, payloads=var_pool),
    ]
    productions.extend(_expr_productions(leaf))
    terminals = frozenset(
        {"if", "elif", "else", ":", "(", ")", ",", "=", "o", "v", "a", "n",
         "action", "pow", "sqrt", "log", "abs"}
        | set(ARITH_OPS) | set(CMP_OPS) | set(BOOL_OPS) | {"-"}
    )
    return Grammar(
        nonterminals=frozenset({"S", "C", "E"}),
        terminals=terminals,
        productions=tuple(productions),
        start="S",
    )


def general_grammar(scalar_names: Sequence[str], array_names: Sequence[str],
                    var_names: Sequence[str]) -> Grammar:
    """Array/loop dialect grammar used for argument-transforming programs."""
    var_pool = tuple(var_names)
    arrays = tuple(array_names)
    productions: list[Production] = [
        Production("arr-assign", "S", ("arr", "[", "E", "]", "=", "E"), K_ARRAY_ASSIGN,
                   payloads=arrays),
        Production("var-def", "S", ("v", "=", "E"), K_VAR_DEF, payloads=var_pool),
        Production("while", "S", ("while", "(", "C", ")", ":", "S"), K_WHILE),
        Production("if", "S", ("if", "(", "C", ")", ":", "S"), K_IF),
        Production("if-else", "S", ("if", "(", "C", ")", ":", "S", "else", ":", "S"), K_IF_ELSE),
        Production("if-elif", "S",
                   ("if", "(", "C", ")", ":", "S", "elif", "(", "C", ")", ":", "S"), K_IF_ELIF),
        Production(
            "if-elif-else", "S",
            ("if", "(", "C", ")", ":", "S", "elif", "(", "C", ")", ":", "S", "else", ":", "S"),
            K_IF_ELIF_ELSE,
        ),
        Production("seq", "S", ("S", "S"), K_SEQ),
    ]
    productions.extend(_condition_productions())
    seen: set[str] = set()
    ordered_pool = []
    for name in tuple(scalar_names) + var_pool:
        if name not in seen:
            seen.add(name)
            ordered_pool.append(name)
    leaf = [
        Production("arr-index", "E", ("arr", "[", "E", "]"), K_ARRAY_INDEX, payloads=arrays),
        Production("var", "E", ("v",), K_VAR_REF, payloads=tuple(ordered_pool)),
    ]
    productions.extend(_expr_productions(leaf))
    terminals = frozenset(
        {"if", "elif", "else", "while", ":", "(", ")", "[", "]", ",", "=",
         "v", "arr", "n", "pow", "sqrt", "log", "abs"}
        | set(ARITH_OPS) | set(CMP_OPS) | set(BOOL_OPS) | {"-"}
    )
    return Grammar(
        nonterminals=frozenset({"S", "C", "E"}),
        terminals=terminals,
        productions=tuple(productions),
        start="S",
    )


# Convenience constructors for AST nodes of the dialect grammars.

def num(value: float) -> Ast:
    return Ast("num", payload=float(value))


def hole() -> Ast:
    return Ast("hole")


def obs(index: int) -> Ast:
    return Ast("obs", payload=int(index))


def var(name: str) -> Ast:
    return Ast("var", payload=name)


def arr_index(name: str, index: Ast) -> Ast:
    return Ast("arr-index", children=(index,), payload=name)


def binop(op_id: str, left: Ast, right: Ast) -> Ast:
    return Ast(op_id, children=(left, right))


def unop(op_id: str, operand: Ast) -> Ast:
    return Ast(op_id, children=(operand,))


def var_def(name: str, value: Ast) -> Ast:
    return Ast("var-def", children=(value,), payload=name)


def action_assign(index: int) -> Ast:
    return Ast("action-assign", payload=int(index))


def arr_assign(name: str, index: Ast, value: Ast) -> Ast:
    return Ast("arr-assign", children=(index, value), payload=name)


def seq(*stmts: Ast) -> Ast:
    """Right-nested statement sequence; flattens nested seq children."""
    flat: list[Ast] = []
    work = list(stmts)
    while work:
        s = work.pop(0)
        if s.prod == "seq":
            work = list(s.children) + work
        else:
            flat.append(s)
    if not flat:
        raise ValueError("empty statement sequence")
    node = flat[-1]
    for s in reversed(flat[:-1]):
        node = Ast("seq", children=(s, node))
    return node


# Tag -> kind for dialect trees (production ids are unique across dialects).
DIALECT_KINDS: dict[str, str] = {
    "seq": K_SEQ,
    "if": K_IF,
    "if-else": K_IF_ELSE,
    "if-elif": K_IF_ELIF,
    "if-elif-else": K_IF_ELIF_ELSE,
    "while": K_WHILE,
    "var-def": K_VAR_DEF,
    "action-assign": K_ACTION_ASSIGN,
    "arr-assign": K_ARRAY_ASSIGN,
    "and": K_BINOP,
    "or": K_BINOP,
    "lt": K_BINOP,
    "le": K_BINOP,
    "ne": K_BINOP,
    "eq": K_BINOP,
    "ge": K_BINOP,
    "gt": K_BINOP,
    "add": K_BINOP,
    "sub": K_BINOP,
    "mul": K_BINOP,
    "div": K_BINOP,
    "pow": K_BINOP,
    "sqrt": K_UNOP,
    "log": K_UNOP,
    "neg": K_UNOP,
    "abs": K_UNOP,
    "num": K_LITERAL,
    "obs": K_OBS,
    "var": K_VAR_REF,
    "arr-index": K_ARRAY_INDEX,
    "hole": K_CONST_HOLE,
}

CONDITION_ROOT_TAGS = frozenset({"and", "or", "lt", "le", "ne", "eq", "ge", "gt"})
EXPR_ROOT_TAGS = frozenset({"add", "sub", "mul", "div", "pow", "sqrt", "log", "neg",
                            "abs", "num", "obs", "var", "arr-index", "hole"})
STATEMENT_ROOT_TAGS = frozenset({"seq", "if", "if-else", "if-elif", "if-elif-else",
                                 "while", "var-def", "action-assign", "arr-assign"})


def kind_of(node: Ast) -> str:
    return DIALECT_KINDS.get(node.prod, K_GENERIC)


def is_condition_fragment(node: Ast) -> bool:
    """C-rooted: a boolean combination/comparison or any bare expression."""
    return node.prod in CONDITION_ROOT_TAGS or node.prod in EXPR_ROOT_TAGS


def is_statement_fragment(node: Ast) -> bool:
    return node.prod in STATEMENT_ROOT_TAGS
