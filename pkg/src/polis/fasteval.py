"""Vectorized execution of games-dialect programs over example batches.

The synthesizer scores every candidate line against the whole dataset; for
the loop-free policy dialect this is done as numpy operations over all
examples at once instead of per-example tree walks.  Semantics (including
short-circuit error behavior) match the scalar interpreter exactly; the
equivalence is property-tested.

Policy programs are straight-line per example, so a run can never exhaust
fuel when the program's node count is below the fuel budget; callers check
that bound and fall back to the scalar interpreter otherwise.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .grammar import Ast, ast_size, count_holes
from .program import GAMES, LineSlot, Program, SLOT_CONDITION

_CMP_UFUNCS = {
    "lt": np.less,
    "le": np.less_equal,
    "ne": np.not_equal,
    "eq": np.equal,
    "ge": np.greater_equal,
    "gt": np.greater,
}

_COND_TAGS = frozenset({"and", "or", "lt", "le", "ne", "eq", "ge", "gt"})


class _BEnv:
    __slots__ = ("obs", "store", "action", "action_set", "err", "n")

    def __init__(self, obs: np.ndarray):
        self.obs = obs
        self.n = obs.shape[0]
        self.store: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.action = np.zeros(self.n, dtype=np.int64)
        self.action_set = np.zeros(self.n, dtype=bool)
        self.err = np.zeros(self.n, dtype=bool)


class _BatchCompiler:
    """Compiles games-dialect ASTs to closures over a :class:`_BEnv`."""

    def __init__(self, hole_values: Optional[Sequence[float]] = None):
        self.hole_values = hole_values
        self.hole_idx = 0
        self.capture_path: Optional[tuple[int, ...]] = None
        self.capture_sink: Optional[list] = None

    # -- expressions: fn(env) -> (values f8[n], err bool[n]) -----------------

    def expr(self, node: Ast) -> Callable:
        tag = node.prod
        if tag == "num":
            v = float(node.payload)
            def const(env):
                return np.full(env.n, v), np.zeros(env.n, dtype=bool)
            return const
        if tag == "hole":
            if self.hole_values is None:
                raise ValueError("cannot compile a constant hole without values")
            v = float(self.hole_values[self.hole_idx])
            self.hole_idx += 1
            def hole_const(env):
                return np.full(env.n, v), np.zeros(env.n, dtype=bool)
            return hole_const
        if tag == "obs":
            i = int(node.payload)
            def read_obs(env):
                return env.obs[:, i], np.zeros(env.n, dtype=bool)
            return read_obs
        if tag == "var":
            name = node.payload
            def read_var(env):
                entry = env.store.get(name)
                if entry is None:
                    return np.zeros(env.n), np.ones(env.n, dtype=bool)
                vals, defined = entry
                return vals, ~defined
            return read_var
        if tag in ("add", "sub", "mul", "div"):
            lf = self.expr(node.children[0])
            rf = self.expr(node.children[1])
            ufunc = {"add": np.add, "sub": np.subtract, "mul": np.multiply,
                     "div": np.divide}[tag]
            is_div = tag == "div"
            def arith(env):
                a, ea = lf(env)
                b, eb = rf(env)
                with np.errstate(all="ignore"):
                    v = ufunc(a, b)
                err = ea | eb | ~np.isfinite(v)
                if is_div:
                    err = err | (b == 0.0)
                return v, err
            return arith
        if tag == "pow":
            lf = self.expr(node.children[0])
            rf = self.expr(node.children[1])
            def do_pow(env):
                a, ea = lf(env)
                b, eb = rf(env)
                with np.errstate(all="ignore"):
                    v = np.power(a, b)
                return v, ea | eb | ~np.isfinite(v)
            return do_pow
        if tag == "sqrt":
            f = self.expr(node.children[0])
            def do_sqrt(env):
                a, ea = f(env)
                with np.errstate(all="ignore"):
                    v = np.sqrt(a)
                return v, ea | (a < 0.0)
            return do_sqrt
        if tag == "log":
            f = self.expr(node.children[0])
            def do_log(env):
                a, ea = f(env)
                with np.errstate(all="ignore"):
                    v = np.log(a)
                return v, ea | (a <= 0.0)
            return do_log
        if tag == "neg":
            f = self.expr(node.children[0])
            def do_neg(env):
                a, ea = f(env)
                return -a, ea
            return do_neg
        if tag == "abs":
            f = self.expr(node.children[0])
            def do_abs(env):
                a, ea = f(env)
                return np.abs(a), ea
            return do_abs
        if tag in _COND_TAGS:
            cf = self.cond(node)
            def bool_as_num(env):
                b, eb = cf(env)
                return b.astype(np.float64), eb
            return bool_as_num
        raise ValueError(f"not an expression node: {tag}")

    # -- conditions: fn(env) -> (bools, err) ---------------------------------

    def cond(self, node: Ast) -> Callable:
        tag = node.prod
        if tag == "and":
            lf = self.cond(node.children[0])
            rf = self.cond(node.children[1])
            def do_and(env):
                lb, le = lf(env)
                rb, re = rf(env)
                # short-circuit: the right side's errors only count where the
                # left side actually evaluated true
                return lb & rb, le | (lb & re)
            return do_and
        if tag == "or":
            lf = self.cond(node.children[0])
            rf = self.cond(node.children[1])
            def do_or(env):
                lb, le = lf(env)
                rb, re = rf(env)
                return lb | rb, le | (~lb & re)
            return do_or
        if tag in _CMP_UFUNCS:
            ufunc = _CMP_UFUNCS[tag]
            lf = self.expr(node.children[0])
            rf = self.expr(node.children[1])
            def do_cmp(env):
                a, ea = lf(env)
                b, eb = rf(env)
                with np.errstate(invalid="ignore"):
                    v = ufunc(a, b)
                return v, ea | eb
            return do_cmp
        ef = self.expr(node)
        def truthy(env):
            v, e = ef(env)
            with np.errstate(invalid="ignore"):
                return v != 0.0, e
        return truthy

    # -- statements: fn(env, active) -----------------------------------------

    def stmt(self, node: Ast, path: tuple[int, ...] = ()) -> Callable:
        if self.capture_path is not None and path == self.capture_path:
            inner = self._stmt(node, path)
            sink = self.capture_sink
            def capturing(env, active):
                sink.append(_capture_state(env, active))
                inner(env, active)
            return capturing
        return self._stmt(node, path)

    def _cond_at(self, node: Ast, path: tuple[int, ...]) -> Callable:
        cf = self.cond(node)
        if self.capture_path is not None and path == self.capture_path:
            sink = self.capture_sink
            def capturing(env, active):
                sink.append(_capture_state(env, active))
                return cf(env)
            return capturing
        return lambda env, active: cf(env)

    def _stmt(self, node: Ast, path: tuple[int, ...]) -> Callable:
        tag = node.prod
        if tag == "seq":
            f0 = self.stmt(node.children[0], path + (0,))
            f1 = self.stmt(node.children[1], path + (1,))
            def run_seq(env, active):
                f0(env, active)
                f1(env, active & ~env.err)
            return run_seq
        if tag == "var-def":
            name = node.payload
            ef = self.expr(node.children[0])
            def assign(env, active):
                v, e = ef(env)
                env.err = env.err | (active & e)
                eff = active & ~e
                entry = env.store.get(name)
                if entry is None:
                    vals = np.where(eff, v, 0.0)
                    defined = eff.copy()
                else:
                    vals = np.where(eff, v, entry[0])
                    defined = entry[1] | eff
                env.store[name] = (vals, defined)
            return assign
        if tag == "action-assign":
            idx = int(node.payload)
            def assign_action(env, active):
                env.action = np.where(active, idx, env.action)
                env.action_set = env.action_set | active
            return assign_action
        if tag in ("if", "if-else", "if-elif", "if-elif-else"):
            return self._compile_if(node, path)
        raise ValueError(f"not a games statement node: {tag}")

    def _compile_if(self, node: Ast, path: tuple[int, ...]) -> Callable:
        tag = node.prod
        c1 = self._cond_at(node.children[0], path + (0,))
        t1 = self.stmt(node.children[1], path + (1,))
        if tag == "if":
            def run_if(env, active):
                b, e = c1(env, active)
                env.err = env.err | (active & e)
                rem = active & ~env.err
                t1(env, rem & b)
            return run_if
        if tag == "if-else":
            f1 = self.stmt(node.children[2], path + (2,))
            def run_if_else(env, active):
                b, e = c1(env, active)
                env.err = env.err | (active & e)
                rem = active & ~env.err
                t1(env, rem & b)
                f1(env, rem & ~b)
            return run_if_else
        c2 = self._cond_at(node.children[2], path + (2,))
        t2 = self.stmt(node.children[3], path + (3,))
        if tag == "if-elif":
            def run_if_elif(env, active):
                b1, e1 = c1(env, active)
                env.err = env.err | (active & e1)
                rem = active & ~env.err
                t1(env, rem & b1)
                other = rem & ~b1
                b2, e2 = c2(env, other)
                env.err = env.err | (other & e2)
                other = other & ~env.err
                t2(env, other & b2)
            return run_if_elif
        f1 = self.stmt(node.children[4], path + (4,))
        def run_if_elif_else(env, active):
            b1, e1 = c1(env, active)
            env.err = env.err | (active & e1)
            rem = active & ~env.err
            t1(env, rem & b1)
            other = rem & ~b1
            b2, e2 = c2(env, other)
            env.err = env.err | (other & e2)
            other = other & ~env.err
            t2(env, other & b2)
            f1(env, other & ~b2)
        return run_if_elif_else


def _capture_state(env: _BEnv, active: np.ndarray) -> dict:
    return {
        "reach": active.copy(),
        "store": {k: (v.copy(), d.copy()) for k, (v, d) in env.store.items()},
        "action": env.action.copy(),
        "action_set": env.action_set.copy(),
    }


def max_straightline_cost(program: Program) -> int:
    """Upper bound on fuel consumed by one policy run (no loops in dialect)."""
    return ast_size(program.root) + 1


class BatchPolicy:
    """A games program compiled for whole-dataset execution."""

    def __init__(self, program: Program):
        if program.dialect.kind != GAMES:
            raise ValueError("BatchPolicy requires a games-dialect program")
        self.program = program
        self._body = _BatchCompiler().stmt(program.root)

    def run(self, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Execute on all rows; returns (actions, err); actions are -1 where err."""
        env = _BEnv(obs)
        self._body(env, np.ones(env.n, dtype=bool))
        err = env.err | ~env.action_set
        actions = np.where(err, -1, env.action)
        return actions, err


class SlotBatchContext:
    """Captured execution state at a slot, over the whole dataset.

    Built once per (program, slot, dataset); candidate fragments are then
    signature-evaluated against it without re-running the rest of the
    program.  Expression and condition results are cached per banked
    fragment (LRU-bounded), so composites cost a few vector operations over
    their children's cached results.  Constant holes evaluate to a fixed
    stand-in value.
    """

    CACHE_CAP = 50_000
    HOLE_STAND_IN = 2.0

    def __init__(self, program: Program, slot: LineSlot, obs: np.ndarray,
                 read_later: Sequence[str]):
        comp = _BatchCompiler()
        comp.capture_path = slot.path
        comp.capture_sink = []
        body = comp.stmt(program.root)
        env = _BEnv(obs)
        body(env, np.ones(env.n, dtype=bool))
        if comp.capture_sink:
            state = comp.capture_sink[0]
        else:  # slot unreachable by construction; keep canonical empty state
            state = {
                "reach": np.zeros(env.n, dtype=bool),
                "store": {},
                "action": np.zeros(env.n, dtype=np.int64),
                "action_set": np.zeros(env.n, dtype=bool),
            }
        self.obs = obs
        self.n = obs.shape[0]
        self.reach = state["reach"]
        self.store = state["store"]
        self.action = state["action"]
        self.action_set = state["action_set"]
        self.slot_kind = slot.kind
        self.read_later = tuple(read_later)
        self._no_err = np.zeros(self.n, dtype=bool)
        self._cache: dict[int, tuple] = {}  # id -> (node, vals, errs)

    def _env(self) -> _BEnv:
        env = _BEnv(self.obs)
        env.store = {k: (v.copy(), d.copy()) for k, (v, d) in self.store.items()}
        env.action = self.action.copy()
        env.action_set = self.action_set.copy()
        return env

    def _cached(self, node: Ast, compute) -> tuple[np.ndarray, np.ndarray]:
        key = id(node)
        hit = self._cache.pop(key, None)
        if hit is not None:
            self._cache[key] = hit  # refresh recency
            return hit[1], hit[2]
        vals, errs = compute()
        if len(self._cache) >= self.CACHE_CAP:
            self._cache.pop(next(iter(self._cache)))
        self._cache[key] = (node, vals, errs)
        return vals, errs

    # -- compositional expression cells: (values f8[n], err bool[n]) ---------

    def _expr(self, node: Ast) -> tuple[np.ndarray, np.ndarray]:
        def compute():
            tag = node.prod
            if tag == "num":
                return np.full(self.n, float(node.payload)), self._no_err
            if tag == "hole":
                return np.full(self.n, self.HOLE_STAND_IN), self._no_err
            if tag == "obs":
                return self.obs[:, int(node.payload)], self._no_err
            if tag == "var":
                entry = self.store.get(node.payload)
                if entry is None:
                    return np.zeros(self.n), ~self._no_err
                vals, defined = entry
                return vals, ~defined
            if tag in ("add", "sub", "mul", "div"):
                a, ea = self._expr(node.children[0])
                b, eb = self._expr(node.children[1])
                ufunc = {"add": np.add, "sub": np.subtract,
                         "mul": np.multiply, "div": np.divide}[tag]
                with np.errstate(all="ignore"):
                    v = ufunc(a, b)
                err = ea | eb | ~np.isfinite(v)
                if tag == "div":
                    err = err | (b == 0.0)
                return v, err
            if tag == "pow":
                a, ea = self._expr(node.children[0])
                b, eb = self._expr(node.children[1])
                with np.errstate(all="ignore"):
                    v = np.power(a, b)
                return v, ea | eb | ~np.isfinite(v)
            if tag == "sqrt":
                a, ea = self._expr(node.children[0])
                with np.errstate(all="ignore"):
                    return np.sqrt(a), ea | (a < 0.0)
            if tag == "log":
                a, ea = self._expr(node.children[0])
                with np.errstate(all="ignore"):
                    return np.log(a), ea | (a <= 0.0)
            if tag == "neg":
                a, ea = self._expr(node.children[0])
                return -a, ea
            if tag == "abs":
                a, ea = self._expr(node.children[0])
                return np.abs(a), ea
            if tag in _COND_TAGS:
                b, eb = self._cond(node)
                return b.astype(np.float64), eb
            raise ValueError(f"not an expression node: {tag}")
        return self._cached(node, compute)

    def _cond(self, node: Ast) -> tuple[np.ndarray, np.ndarray]:
        def compute():
            tag = node.prod
            if tag == "and":
                lb, le = self._cond(node.children[0])
                rb, re = self._cond(node.children[1])
                return lb & rb, le | (lb & re)
            if tag == "or":
                lb, le = self._cond(node.children[0])
                rb, re = self._cond(node.children[1])
                return lb | rb, le | (~lb & re)
            if tag in _CMP_UFUNCS:
                a, ea = self._expr(node.children[0])
                b, eb = self._expr(node.children[1])
                with np.errstate(invalid="ignore"):
                    return _CMP_UFUNCS[tag](a, b), ea | eb
            v, e = self._expr(node)
            with np.errstate(invalid="ignore"):
                return v != 0.0, e
        return self._cached(node, compute)

    def signature(self, fragment: Ast, nt: str) -> tuple[str, bytes]:
        """Observable local effect of the fragment on every example, typed by
        its nonterminal and hashed canonically as bytes."""
        if nt == "E":
            vals, errs = self._expr(fragment)
            dead = ~self.reach | errs
            codes = np.where(~self.reach, 0, np.where(errs, 1, 2)).astype(np.int8)
            clean = np.where(dead, 0.0, vals)
            return nt, codes.tobytes() + clean.tobytes()
        if nt == "C":
            vals, errs = self._cond(fragment)
            codes = np.where(~self.reach, 0,
                             np.where(errs, 1, 2 + vals.astype(np.int8)))
            return nt, codes.astype(np.int8).tobytes()
        n_holes = count_holes(fragment)
        comp = _BatchCompiler([self.HOLE_STAND_IN] * n_holes)
        sf = comp.stmt(fragment)
        env = self._env()
        env.err = np.zeros(self.n, dtype=bool)
        sf(env, self.reach)
        parts = []
        dead = ~self.reach | env.err
        codes = np.where(~self.reach, 0, np.where(env.err, 1, 2)).astype(np.int8)
        parts.append(codes.tobytes())
        act = np.where(dead | ~env.action_set, -1, env.action).astype(np.int64)
        parts.append(act.tobytes())
        for name in self.read_later:
            entry = env.store.get(name)
            if entry is None:
                parts.append(b"\x00")
                continue
            vals, defined = entry
            live = defined & ~dead
            parts.append(live.astype(np.int8).tobytes())
            parts.append(np.where(live, vals, 0.0).tobytes())
        return nt, b"".join(parts)


def batch_actions(program: Program, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return BatchPolicy(program).run(obs)
