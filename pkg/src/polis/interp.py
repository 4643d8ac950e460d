"""Closure-compiled interpreter for both dialects.

Programs compile once into a tree of Python closures and can then be run
many times (the synthesizer executes the same program on every dataset
example for every candidate line).  All abnormal paths raise
:class:`InterpError` internally and surface as an ``ExecOutcome`` with an
error status; no input can crash or hang the caller.  A fuel budget bounds
runtime and converts divergent loops into runtime errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .grammar import Ast, ast_size
from .program import GAMES, GENERAL, LineSlot, Program, SLOT_CONDITION, _subtree_at

E_DIV0 = "division-by-zero"
E_LOG = "log-domain"
E_SQRT = "sqrt-domain"
E_POW = "pow-domain"
E_OVERFLOW = "overflow"
E_UNBOUND = "unbound-variable"
E_INDEX = "index-out-of-bounds"
E_INDEX_FRAC = "index-not-integer"
E_FUEL = "fuel-exhausted"
E_NO_ACTION = "action-not-assigned"
E_ARRAY_VALUE = "array-used-as-value"

_MISS = object()


@dataclass(frozen=True)
class RuntimeLimits:
    """Per-execution step budget; loops consume fuel every iteration."""
    fuel: int = 10_000

    def __post_init__(self) -> None:
        if self.fuel <= 0:
            raise ValueError("fuel must be positive")


DEFAULT_LIMITS = RuntimeLimits()

STATUS_OK = "ok"
STATUS_ERROR = "runtime-error"


@dataclass(frozen=True)
class ExecOutcome:
    result: object
    steps: int
    status: str
    reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


class InterpError(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class _Ctx:
    __slots__ = ("store", "obs", "fuel", "captures")

    def __init__(self, store, obs, fuel):
        self.store = store
        self.obs = obs
        self.fuel = fuel
        self.captures = None


def _snapshot(ctx: _Ctx) -> dict:
    return {k: (list(v) if type(v) is list else v) for k, v in ctx.store.items()}


def new_ctx(store: dict, obs: tuple = (), fuel: int = 10_000) -> "_Ctx":
    """Bare execution context for running compiled fragments directly."""
    return _Ctx(store, obs, fuel)


_CMP_FNS = {
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "ne": lambda a, b: a != b,
    "eq": lambda a, b: a == b,
    "ge": lambda a, b: a >= b,
    "gt": lambda a, b: a > b,
}

_COND_TAGS = frozenset({"and", "or", "lt", "le", "ne", "eq", "ge", "gt"})


class _Compiler:
    """Compiles AST nodes to closures over a :class:`_Ctx`.

    Fuel accounting: each statement charges one unit plus, for expressions it
    evaluates, the expression's node count (charged up front; short-circuit
    does not refund the skipped side).  While loops charge per iteration.
    """

    def __init__(self, hole_values: Optional[Sequence[float]] = None):
        self.hole_values = hole_values
        self.hole_idx = 0
        # patchable slot support
        self.slot_cell: Optional[list] = None
        self.slot_path: Optional[tuple[int, ...]] = None
        # capture support
        self.capture_path: Optional[tuple[int, ...]] = None
        self.capture_cap: int = 0

    # -- expressions --------------------------------------------------------

    def expr(self, node: Ast) -> Callable[[_Ctx], float]:
        tag = node.prod
        if tag == "num":
            v = float(node.payload)
            return lambda ctx: v
        if tag == "hole":
            if self.hole_values is None:
                raise ValueError("cannot compile a constant hole without values")
            v = float(self.hole_values[self.hole_idx])
            self.hole_idx += 1
            return lambda ctx: v
        if tag == "obs":
            i = node.payload
            return lambda ctx: ctx.obs[i]
        if tag == "var":
            name = node.payload
            def read_var(ctx):
                v = ctx.store.get(name, _MISS)
                if v is _MISS:
                    raise InterpError(E_UNBOUND)
                if type(v) is list:
                    raise InterpError(E_ARRAY_VALUE)
                return v
            return read_var
        if tag == "arr-index":
            name = node.payload
            idxf = self.expr(node.children[0])
            def read_elem(ctx):
                arr = ctx.store.get(name, _MISS)
                if arr is _MISS:
                    raise InterpError(E_UNBOUND)
                iv = idxf(ctx)
                ii = int(iv)
                if ii != iv:
                    raise InterpError(E_INDEX_FRAC)
                n = len(arr)
                if ii == -1:
                    if n == 0:
                        raise InterpError(E_INDEX)
                    return arr[-1]
                if 0 <= ii < n:
                    return arr[ii]
                raise InterpError(E_INDEX)
            return read_elem
        if tag in ("add", "sub", "mul", "div"):
            lf = self.expr(node.children[0])
            rf = self.expr(node.children[1])
            if tag == "add":
                def arith(ctx):
                    r = lf(ctx) + rf(ctx)
                    if not math.isfinite(r):
                        raise InterpError(E_OVERFLOW)
                    return r
            elif tag == "sub":
                def arith(ctx):
                    r = lf(ctx) - rf(ctx)
                    if not math.isfinite(r):
                        raise InterpError(E_OVERFLOW)
                    return r
            elif tag == "mul":
                def arith(ctx):
                    r = lf(ctx) * rf(ctx)
                    if not math.isfinite(r):
                        raise InterpError(E_OVERFLOW)
                    return r
            else:
                def arith(ctx):
                    b = rf(ctx)
                    if b == 0.0:
                        raise InterpError(E_DIV0)
                    r = lf(ctx) / b
                    if not math.isfinite(r):
                        raise InterpError(E_OVERFLOW)
                    return r
            return arith
        if tag == "pow":
            lf = self.expr(node.children[0])
            rf = self.expr(node.children[1])
            def do_pow(ctx):
                a = lf(ctx)
                b = rf(ctx)
                try:
                    r = math.pow(a, b)
                except ValueError:
                    raise InterpError(E_POW) from None
                except OverflowError:
                    raise InterpError(E_OVERFLOW) from None
                if not math.isfinite(r):
                    raise InterpError(E_OVERFLOW)
                return r
            return do_pow
        if tag == "sqrt":
            f = self.expr(node.children[0])
            def do_sqrt(ctx):
                a = f(ctx)
                if a < 0.0:
                    raise InterpError(E_SQRT)
                return math.sqrt(a)
            return do_sqrt
        if tag == "log":
            f = self.expr(node.children[0])
            def do_log(ctx):
                a = f(ctx)
                if a <= 0.0:
                    raise InterpError(E_LOG)
                return math.log(a)
            return do_log
        if tag == "neg":
            f = self.expr(node.children[0])
            return lambda ctx: -f(ctx)
        if tag == "abs":
            f = self.expr(node.children[0])
            return lambda ctx: abs(f(ctx))
        if tag in _COND_TAGS:
            # a condition used where a number is expected: true = 1.0
            cf = self.cond(node)
            return lambda ctx: 1.0 if cf(ctx) else 0.0
        raise ValueError(f"not an expression node: {tag}")

    # -- conditions ----------------------------------------------------------

    def cond(self, node: Ast) -> Callable[[_Ctx], bool]:
        tag = node.prod
        if tag == "and":
            lf = self.cond(node.children[0])
            rf = self.cond(node.children[1])
            return lambda ctx: lf(ctx) and rf(ctx)
        if tag == "or":
            lf = self.cond(node.children[0])
            rf = self.cond(node.children[1])
            return lambda ctx: lf(ctx) or rf(ctx)
        if tag in _CMP_FNS:
            op = _CMP_FNS[tag]
            lf = self.expr(node.children[0])
            rf = self.expr(node.children[1])
            return lambda ctx: op(lf(ctx), rf(ctx))
        ef = self.expr(node)
        return lambda ctx: ef(ctx) != 0.0

    def costed_cond(self, node: Ast) -> Callable[[_Ctx], bool]:
        """Condition closure that charges its own node count as fuel."""
        size = ast_size(node)
        cf = self.cond(node)
        def charged(ctx):
            ctx.fuel -= size
            if ctx.fuel < 0:
                raise InterpError(E_FUEL)
            return cf(ctx)
        return charged

    def _slot_cond(self, node: Ast, path: tuple[int, ...]) -> Callable[[_Ctx], bool]:
        """Condition of a header, honoring slot patching and capture hooks."""
        if self.slot_path is not None and path == self.slot_path:
            cell = self.slot_cell
            def patched(ctx):
                return cell[0](ctx)
            base = patched
        else:
            base = self.costed_cond(node)
        if self.capture_path is not None and path == self.capture_path:
            cap = self.capture_cap
            inner = base
            def capturing(ctx):
                if len(ctx.captures) < cap:
                    ctx.captures.append(_snapshot(ctx))
                return inner(ctx)
            return capturing
        return base

    # -- statements ------------------------------------------------------------

    def stmt(self, node: Ast, path: tuple[int, ...] = ()) -> Callable[[_Ctx], None]:
        if self.slot_path is not None and path == self.slot_path:
            cell = self.slot_cell
            base = lambda ctx: cell[0](ctx)
        else:
            base = self._stmt(node, path)
        if self.capture_path is not None and path == self.capture_path:
            cap = self.capture_cap
            inner = base
            def capturing(ctx):
                if len(ctx.captures) < cap:
                    ctx.captures.append(_snapshot(ctx))
                inner(ctx)
            return capturing
        return base

    def _stmt(self, node: Ast, path: tuple[int, ...]) -> Callable[[_Ctx], None]:
        tag = node.prod
        if tag == "seq":
            f0 = self.stmt(node.children[0], path + (0,))
            f1 = self.stmt(node.children[1], path + (1,))
            def run_seq(ctx):
                f0(ctx)
                f1(ctx)
            return run_seq
        if tag == "var-def":
            name = node.payload
            ef = self.expr(node.children[0])
            cost = 1 + ast_size(node.children[0])
            def assign(ctx):
                ctx.fuel -= cost
                if ctx.fuel < 0:
                    raise InterpError(E_FUEL)
                ctx.store[name] = ef(ctx)
            return assign
        if tag == "action-assign":
            idx = int(node.payload)
            def assign_action(ctx):
                ctx.fuel -= 1
                if ctx.fuel < 0:
                    raise InterpError(E_FUEL)
                ctx.store["action"] = idx
            return assign_action
        if tag == "arr-assign":
            name = node.payload
            idxf = self.expr(node.children[0])
            valf = self.expr(node.children[1])
            cost = 1 + ast_size(node.children[0]) + ast_size(node.children[1])
            def assign_elem(ctx):
                ctx.fuel -= cost
                if ctx.fuel < 0:
                    raise InterpError(E_FUEL)
                arr = ctx.store.get(name, _MISS)
                if arr is _MISS:
                    raise InterpError(E_UNBOUND)
                iv = idxf(ctx)
                ii = int(iv)
                if ii != iv:
                    raise InterpError(E_INDEX_FRAC)
                n = len(arr)
                v = valf(ctx)
                if ii == -1:
                    if n == 0:
                        raise InterpError(E_INDEX)
                    arr[-1] = v
                elif 0 <= ii < n:
                    arr[ii] = v
                else:
                    raise InterpError(E_INDEX)
            return assign_elem
        if tag == "if":
            cf = self._slot_cond(node.children[0], path + (0,))
            tf = self.stmt(node.children[1], path + (1,))
            def run_if(ctx):
                ctx.fuel -= 1
                if ctx.fuel < 0:
                    raise InterpError(E_FUEL)
                if cf(ctx):
                    tf(ctx)
            return run_if
        if tag == "if-else":
            cf = self._slot_cond(node.children[0], path + (0,))
            tf = self.stmt(node.children[1], path + (1,))
            ff = self.stmt(node.children[2], path + (2,))
            def run_if_else(ctx):
                ctx.fuel -= 1
                if ctx.fuel < 0:
                    raise InterpError(E_FUEL)
                if cf(ctx):
                    tf(ctx)
                else:
                    ff(ctx)
            return run_if_else
        if tag == "if-elif":
            c1 = self._slot_cond(node.children[0], path + (0,))
            t1 = self.stmt(node.children[1], path + (1,))
            c2 = self._slot_cond(node.children[2], path + (2,))
            t2 = self.stmt(node.children[3], path + (3,))
            def run_if_elif(ctx):
                ctx.fuel -= 1
                if ctx.fuel < 0:
                    raise InterpError(E_FUEL)
                if c1(ctx):
                    t1(ctx)
                elif c2(ctx):
                    t2(ctx)
            return run_if_elif
        if tag == "if-elif-else":
            c1 = self._slot_cond(node.children[0], path + (0,))
            t1 = self.stmt(node.children[1], path + (1,))
            c2 = self._slot_cond(node.children[2], path + (2,))
            t2 = self.stmt(node.children[3], path + (3,))
            ff = self.stmt(node.children[4], path + (4,))
            def run_if_elif_else(ctx):
                ctx.fuel -= 1
                if ctx.fuel < 0:
                    raise InterpError(E_FUEL)
                if c1(ctx):
                    t1(ctx)
                elif c2(ctx):
                    t2(ctx)
                else:
                    ff(ctx)
            return run_if_elif_else
        if tag == "while":
            cf = self._slot_cond(node.children[0], path + (0,))
            bf = self.stmt(node.children[1], path + (1,))
            def run_while(ctx):
                while True:
                    ctx.fuel -= 1
                    if ctx.fuel < 0:
                        raise InterpError(E_FUEL)
                    if not cf(ctx):
                        return
                    bf(ctx)
            return run_while
        raise ValueError(f"not a statement node: {tag}")


def compile_statement_fragment(node: Ast,
                               hole_values: Optional[Sequence[float]] = None
                               ) -> Callable[[_Ctx], None]:
    return _Compiler(hole_values).stmt(node)


def compile_condition_fragment(node: Ast,
                               hole_values: Optional[Sequence[float]] = None
                               ) -> Callable[[_Ctx], bool]:
    return _Compiler(hole_values).costed_cond(node)


def compile_expression_fragment(node: Ast,
                                hole_values: Optional[Sequence[float]] = None
                                ) -> Callable[[_Ctx], float]:
    return _Compiler(hole_values).expr(node)


class CompiledProgram:
    """A program compiled for repeated execution.

    Optionally compiled with a patchable slot (``slot``): the fragment at
    that slot is read through an indirection cell, so candidate fragments can
    be swapped in with :meth:`set_fragment` without recompiling the rest of
    the program.  Optionally captures the variable store at each reach of a
    slot (``capture``) for building evaluation contexts.
    """

    def __init__(self, program: Program, *, slot: Optional[LineSlot] = None,
                 capture: Optional[LineSlot] = None, capture_cap: int = 8):
        self.program = program
        self.dialect = program.dialect
        comp = _Compiler()
        self._capturing = capture is not None
        if slot is not None:
            comp.slot_cell = [None]
            comp.slot_path = slot.path
            self._slot_kind = slot.kind
            self._slot_cell = comp.slot_cell
        else:
            self._slot_cell = None
        if capture is not None:
            comp.capture_path = capture.path
            comp.capture_cap = capture_cap
        self._body = comp.stmt(program.root)
        if slot is not None:
            # keep the original fragment in place until patched
            self.set_fragment(_subtree_at(program.root, slot.path))

    def set_fragment(self, fragment: Ast,
                     hole_values: Optional[Sequence[float]] = None) -> None:
        if self._slot_cell is None:
            raise ValueError("program was not compiled with a patchable slot")
        if self._slot_kind == SLOT_CONDITION:
            self._slot_cell[0] = compile_condition_fragment(fragment, hole_values)
        else:
            self._slot_cell[0] = compile_statement_fragment(fragment, hole_values)

    # -- execution -------------------------------------------------------------

    def run_policy(self, observation: Sequence[float],
                   limits: RuntimeLimits = DEFAULT_LIMITS):
        d = self.dialect
        if len(observation) != d.obs_dim:
            raise ValueError(
                f"observation has length {len(observation)}, expected {d.obs_dim}")
        ctx = _Ctx({}, tuple(float(x) for x in observation), limits.fuel)
        if self._capturing:
            ctx.captures = []
        try:
            self._body(ctx)
            action = ctx.store.get("action", _MISS)
            if action is _MISS:
                raise InterpError(E_NO_ACTION)
            outcome = ExecOutcome(int(action), limits.fuel - ctx.fuel, STATUS_OK)
        except InterpError as err:
            outcome = ExecOutcome(None, min(limits.fuel, limits.fuel - ctx.fuel),
                                  STATUS_ERROR, err.reason)
        if self._capturing:
            return outcome, ctx.captures
        return outcome

    def run_general(self, args: Sequence, limits: RuntimeLimits = DEFAULT_LIMITS):
        d = self.dialect
        if len(args) != len(d.params):
            raise ValueError(f"expected {len(d.params)} arguments, got {len(args)}")
        store: dict = {}
        for name, value in zip(d.params, args):
            if name in d.arrays:
                store[name] = [float(x) for x in value]
            else:
                store[name] = float(value)
        ctx = _Ctx(store, (), limits.fuel)
        if self._capturing:
            ctx.captures = []
        try:
            self._body(ctx)
            result = tuple(
                list(store[p]) if p in d.arrays else store[p] for p in d.params)
            outcome = ExecOutcome(result, limits.fuel - ctx.fuel, STATUS_OK)
        except InterpError as err:
            outcome = ExecOutcome(None, min(limits.fuel, limits.fuel - ctx.fuel),
                                  STATUS_ERROR, err.reason)
        if self._capturing:
            return outcome, ctx.captures
        return outcome

    def run(self, example_input, limits: RuntimeLimits = DEFAULT_LIMITS):
        if self.dialect.kind == GAMES:
            return self.run_policy(example_input, limits)
        return self.run_general(example_input, limits)


def run_policy(program: Program, observation: Sequence[float],
               limits: RuntimeLimits = DEFAULT_LIMITS) -> ExecOutcome:
    """Execute a policy program on one observation, returning its action."""
    if program.dialect.kind != GAMES:
        raise ValueError("run_policy requires a games-dialect program")
    return CompiledProgram(program).run_policy(observation, limits)


def run_general(program: Program, args: Sequence,
                limits: RuntimeLimits = DEFAULT_LIMITS) -> ExecOutcome:
    """Execute an argument-transforming program; the caller's args are copied."""
    if program.dialect.kind != GENERAL:
        raise ValueError("run_general requires a general-dialect program")
    return CompiledProgram(program).run_general(args, limits)


def slot_contexts(program: Program, slot: LineSlot, inputs: Sequence,
                  limits: RuntimeLimits = DEFAULT_LIMITS,
                  cap: int = 8) -> list[list[dict]]:
    """Variable-store snapshots at each reach of ``slot`` for every input.

    Snapshots are taken against the original program, one list per input, at
    most ``cap`` per input (loops may reach a line many times).  Inputs whose
    execution never reaches the slot yield empty lists.
    """
    compiled = CompiledProgram(program, capture=slot, capture_cap=cap)
    out = []
    for example_input in inputs:
        _, captures = compiled.run(example_input, limits)
        out.append(captures)
    return out
