"""Size-ordered bottom-up enumeration and per-line synthesis.

Fragments are enumerated in nondecreasing AST node count, composing larger
fragments from banked smaller ones, with duplicates discarded by their
observable effect on the dataset (observational equivalence).  A line's
synthesis streams candidates through a proxy-scored shortlist and finishes by
ranking the shortlist under the real objective.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from itertools import product
from typing import Callable, Optional, Sequence

import numpy as np

from .evaluation import Evaluator, KBestList
from .fasteval import SlotBatchContext
from .grammar import Ast, Grammar, SYNTH_VAR_POOL, ast_size, count_holes, \
    games_grammar, general_grammar
from .interp import DEFAULT_LIMITS, InterpError, RuntimeLimits, \
    _CMP_FNS, _COND_TAGS, compile_statement_fragment, new_ctx, slot_contexts
from .program import GAMES, LineSlot, Program, SLOT_CONDITION, program_vars, \
    read_vars, replace_slot

EXHAUSTED = "exhausted"
TIMED_OUT = "timed-out"

# Deterministic stand-in value for unfilled constant holes during signature
# evaluation.  An integer (so integer-only contexts like array indexing stay
# meaningful) but not 0/1 (identity/annihilator collisions would over-merge).
HOLE_MAGIC = (2.0,)

DEFAULT_HOLE_BOUNDS = (-100.0, 100.0)
MAX_FRAGMENT_SIZE = 25
CONTEXT_CAP = 6
# Local fuel for signature runs: just enough for desk-scale fragments; loopy
# fragments that exceed it collapse into the error signature class (their
# spliced behavior is still scored exactly if a representative survives).
FRAGMENT_FUEL = 100


def magic_hole_values(n: int) -> tuple[float, ...]:
    return (HOLE_MAGIC[0],) * n


class Budget:
    """Enumeration budget: wall-clock seconds or deterministic work units.

    Unit budgets make whole runs bit-reproducible; wall budgets match the
    time-limit interface but two runs may cut off at different candidates.
    """

    def __init__(self, deadline: Optional[float], units: Optional[float]):
        self._deadline = deadline
        self._units = units
        self.used_units = 0

    @classmethod
    def seconds(cls, s: float) -> "Budget":
        return cls(time.monotonic() + max(0.0, s), None)

    @classmethod
    def units(cls, n: float) -> "Budget":
        return cls(None, n)

    def charge(self, n: int = 1) -> None:
        self.used_units += n
        if self._units is not None:
            self._units -= n

    def expired(self) -> bool:
        if self._units is not None:
            return self._units <= 0
        return time.monotonic() >= self._deadline


class _Timeout(Exception):
    pass


class ProgramBank:
    """Fragments indexed by (nonterminal, size), deduplicated per
    nonterminal by signature."""

    def __init__(self):
        self._buckets: dict[str, dict[int, list[Ast]]] = {}
        self._seen: dict[str, set] = {}
        self._sigs: dict[str, list] = {}

    def fragments(self, nt: str, size: int) -> list[Ast]:
        return self._buckets.get(nt, {}).get(size, [])

    def seen(self, nt: str, sig) -> bool:
        return sig in self._seen.setdefault(nt, set())

    def add(self, nt: str, size: int, frag: Ast, sig) -> None:
        self._buckets.setdefault(nt, {}).setdefault(size, []).append(frag)
        self._seen.setdefault(nt, set()).add(sig)
        self._sigs.setdefault(nt, []).append(sig)

    def signatures(self, nt: str) -> list:
        return self._sigs.get(nt, [])

    def count(self, nt: Optional[str] = None) -> int:
        if nt is None:
            return sum(self.count(k) for k in self._buckets)
        return sum(len(v) for v in self._buckets.get(nt, {}).values())


@dataclass
class EnumerationResult:
    status: str  # EXHAUSTED | TIMED_OUT
    bank: ProgramBank
    candidates: int  # fragments offered to the callback


def _compositions(total: int, parts: int):
    """Ordered compositions of ``total`` into ``parts`` positive integers."""
    if parts == 1:
        yield (total,)
        return
    for first in range(1, total - parts + 2):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _reachable_nonterminals(grammar: Grammar, root: str) -> frozenset[str]:
    seen = {root}
    frontier = [root]
    while frontier:
        nt = frontier.pop()
        for prod in grammar.productions:
            if prod.lhs != nt:
                continue
            for child in prod.child_symbols(grammar.nonterminals):
                if child not in seen:
                    seen.add(child)
                    frontier.append(child)
    return frozenset(seen)


def enumerate_fragments(grammar: Grammar, root: str,
                        signature_fn: Callable[[Ast, str], object],
                        budget: Budget,
                        on_candidate: Callable[[Ast, object], None],
                        *, max_size: int = MAX_FRAGMENT_SIZE,
                        prune: bool = True) -> EnumerationResult:
    """Stream ``root``-rooted fragments in nondecreasing size order.

    Every structurally new fragment is executed through
    ``signature_fn(fragment, nonterminal)``; with pruning enabled, fragments
    whose signature was already seen for that nonterminal are dropped before
    reaching the callback or the bank.  Only nonterminals reachable from the
    root are enumerated.  Order within a size follows the grammar's
    production order and is fully deterministic.
    """
    if root not in grammar.nonterminals:
        raise ValueError(f"unknown nonterminal {root!r}")
    bank = ProgramBank()
    nts = grammar.nonterminals
    reachable = _reachable_nonterminals(grammar, root)
    units = [p for p in grammar.productions if p.is_unit and p.lhs in reachable]
    builders = [p for p in grammar.productions
                if not p.is_unit and p.lhs in reachable]
    candidates = 0
    propagated: set[tuple[str, int]] = set()  # (nt, id(frag)) in unpruned mode

    def consider(nt: str, size: int, frag: Ast) -> None:
        nonlocal candidates
        if budget.expired():
            raise _Timeout
        budget.charge(1)
        sig = signature_fn(frag, nt)
        if prune and bank.seen(nt, sig):
            return
        bank.add(nt, size, frag, sig)
        if nt == root:
            candidates += 1
            on_candidate(frag, sig)

    try:
        for size in range(1, max_size + 1):
            for prod in builders:
                child_nts = prod.child_symbols(nts)
                payloads = prod.payloads if prod.payloads is not None else (None,)
                if not child_nts:
                    if size != 1:
                        continue
                    for payload in payloads:
                        consider(prod.lhs, 1, Ast(prod.id, payload=payload))
                    continue
                need = size - 1
                if need < len(child_nts):
                    continue
                for split in _compositions(need, len(child_nts)):
                    pools = [bank.fragments(nt_i, s_i)
                             for nt_i, s_i in zip(child_nts, split)]
                    if any(not pool for pool in pools):
                        continue
                    for payload in payloads:
                        for combo in product(*pools):
                            consider(prod.lhs, size,
                                     Ast(prod.id, children=combo, payload=payload))
            # unit productions copy fragments between nonterminals at equal size
            changed = True
            while changed:
                changed = False
                for prod in units:
                    src = prod.rhs[0]
                    before = bank.count(prod.lhs)
                    for frag in list(bank.fragments(src, size)):
                        key = (prod.lhs, id(frag))
                        if key in propagated:
                            continue
                        propagated.add(key)
                        consider(prod.lhs, size, frag)
                    if bank.count(prod.lhs) != before:
                        changed = True
    except _Timeout:
        return EnumerationResult(TIMED_OUT, bank, candidates)
    return EnumerationResult(EXHAUSTED, bank, candidates)


# ---------------------------------------------------------------------------
# Slot signature contexts
# ---------------------------------------------------------------------------

_ERR = "!"  # error marker inside signature cells


class SlotScalarContext:
    """Per-example store snapshots at a slot (general dialect), with
    compositional cell evaluation for signature computation.

    Cells are typed by the fragment's nonterminal: raw values for
    expressions, truth values for conditions, and the visible store effect
    (read-later variables and arrays) for statements.  Expression and
    condition cell vectors are cached per banked fragment, so a composite's
    vector is a handful of per-cell operations over its children's cached
    vectors; this mirrors the interpreter's semantics exactly (the
    equivalence is property-tested).  Constant holes evaluate to a fixed
    stand-in value, so hole fragments dedup by their shape at that value.
    """

    TOTAL_SNAPSHOT_CAP = 14

    def __init__(self, program: Program, slot: LineSlot, inputs: Sequence,
                 limits: RuntimeLimits, cap: int, read_later: Sequence[str]):
        self.slot_kind = slot.kind
        self.read_later = tuple(read_later)
        per_input = slot_contexts(program, slot, inputs, limits, cap)
        snaps = [snap for snaps in per_input for snap in snaps]
        if len(snaps) > self.TOTAL_SNAPSHOT_CAP:
            # deterministic even stride: coarser equivalence, sound either way
            step = (len(snaps) - 1) / (self.TOTAL_SNAPSHOT_CAP - 1)
            picked = sorted({round(i * step) for i in range(self.TOTAL_SNAPSHOT_CAP)})
            snaps = [snaps[i] for i in picked]
        self.snaps = snaps
        self._cache: dict[int, tuple] = {}  # id(node) -> (node, cells)
        # per-snapshot visible-state tuples; simple statements derive their
        # effect cells from these without copying stores
        self._rl_pos = {name: i for i, name in enumerate(self.read_later)}
        self._base = [tuple(self._cell_value(snap, n) for n in self.read_later)
                      for snap in snaps]

    # -- compositional expression / condition cells ---------------------------

    def _expr_cells(self, node: Ast) -> tuple:
        hit = self._cache.get(id(node))
        if hit is not None:
            return hit[1]
        tag = node.prod
        snaps = self.snaps
        if tag == "num":
            v = float(node.payload)
            cells = (v,) * len(snaps)
        elif tag == "hole":
            v = HOLE_MAGIC[0]
            cells = (v,) * len(snaps)
        elif tag == "var":
            name = node.payload
            out = []
            for snap in snaps:
                v = snap.get(name)
                if v is None or type(v) is list:
                    out.append(_ERR)
                else:
                    out.append(v)
            cells = tuple(out)
        elif tag == "arr-index":
            name = node.payload
            idx_cells = self._expr_cells(node.children[0])
            out = []
            for snap, iv in zip(snaps, idx_cells):
                arr = snap.get(name)
                if iv is _ERR or arr is None or type(arr) is not list:
                    out.append(_ERR)
                    continue
                ii = int(iv)
                if ii != iv:
                    out.append(_ERR)
                elif ii == -1:
                    out.append(arr[-1] if arr else _ERR)
                elif 0 <= ii < len(arr):
                    out.append(arr[ii])
                else:
                    out.append(_ERR)
            cells = tuple(out)
        elif tag in ("add", "sub", "mul", "div", "pow"):
            lc = self._expr_cells(node.children[0])
            rc = self._expr_cells(node.children[1])
            out = []
            for a, b in zip(lc, rc):
                if a is _ERR or b is _ERR:
                    out.append(_ERR)
                    continue
                try:
                    if tag == "add":
                        r = a + b
                    elif tag == "sub":
                        r = a - b
                    elif tag == "mul":
                        r = a * b
                    elif tag == "div":
                        if b == 0.0:
                            out.append(_ERR)
                            continue
                        r = a / b
                    else:
                        r = math.pow(a, b)
                except (ValueError, OverflowError):
                    out.append(_ERR)
                    continue
                out.append(r if math.isfinite(r) else _ERR)
            cells = tuple(out)
        elif tag in ("sqrt", "log", "neg", "abs"):
            oc = self._expr_cells(node.children[0])
            out = []
            for a in oc:
                if a is _ERR:
                    out.append(_ERR)
                elif tag == "neg":
                    out.append(-a)
                elif tag == "abs":
                    out.append(abs(a))
                elif tag == "sqrt":
                    out.append(math.sqrt(a) if a >= 0.0 else _ERR)
                else:
                    out.append(math.log(a) if a > 0.0 else _ERR)
            cells = tuple(out)
        elif node.prod in _COND_TAGS:
            cells = tuple(
                c if c is _ERR else (1.0 if c else 0.0)
                for c in self._cond_cells(node))
        else:
            raise ValueError(f"not an expression node: {tag}")
        self._cache[id(node)] = (node, cells)
        return cells

    def _cond_cells(self, node: Ast) -> tuple:
        hit = self._cache.get(id(node))
        if hit is not None:
            return hit[1]
        tag = node.prod
        if tag in ("and", "or"):
            lc = self._cond_cells(node.children[0])
            rc = self._cond_cells(node.children[1])
            out = []
            want = tag == "or"  # short-circuit when the left side is `want`
            for a, b in zip(lc, rc):
                if a is _ERR:
                    out.append(_ERR)
                elif a is want:
                    out.append(want)
                else:
                    out.append(b)
            cells = tuple(out)
        elif tag in _CMP_FNS:
            op = _CMP_FNS[tag]
            lc = self._expr_cells(node.children[0])
            rc = self._expr_cells(node.children[1])
            cells = tuple(
                _ERR if (a is _ERR or b is _ERR) else op(a, b)
                for a, b in zip(lc, rc))
        else:
            ec = self._expr_cells(node)
            cells = tuple(
                v if v is _ERR else (v != 0.0) for v in ec)
        self._cache[id(node)] = (node, cells)
        return cells

    def _cell_value(self, store: dict, name: str):
        v = store.get(name)
        if v is None:
            return "?"
        if type(v) is list:
            return tuple(v)
        return v

    def _vardef_cells(self, fragment: Ast) -> tuple:
        vc = self._expr_cells(fragment.children[0])
        pos = self._rl_pos.get(fragment.payload)
        out = []
        for base, v in zip(self._base, vc):
            if v is _ERR:
                out.append(_ERR)
            elif pos is None:  # not externally visible: a no-op
                out.append(base)
            else:
                out.append(base[:pos] + (v,) + base[pos + 1:])
        return tuple(out)

    def _arrassign_cells(self, fragment: Ast) -> tuple:
        name = fragment.payload
        ic = self._expr_cells(fragment.children[0])
        vc = self._expr_cells(fragment.children[1])
        pos = self._rl_pos.get(name)
        out = []
        for snap, base, iv, v in zip(self.snaps, self._base, ic, vc):
            arr = snap.get(name)
            if iv is _ERR or arr is None or type(arr) is not list:
                out.append(_ERR)
                continue
            ii = int(iv)
            if ii != iv or v is _ERR:
                out.append(_ERR)
                continue
            n = len(arr)
            if ii == -1 and n > 0:
                ii = n - 1
            if not 0 <= ii < n:
                out.append(_ERR)
                continue
            if pos is None:
                out.append(base)
                continue
            old = base[pos]
            out.append(base[:pos] + (old[:ii] + (v,) + old[ii + 1:],)
                       + base[pos + 1:])
        return tuple(out)

    def signature(self, fragment: Ast, nt: str) -> tuple:
        if nt == "E":
            return (nt, self._expr_cells(fragment))
        if nt == "C":
            return (nt, self._cond_cells(fragment))
        tag = fragment.prod
        if tag == "var-def":
            return (nt, self._vardef_cells(fragment))
        if tag == "arr-assign":
            return (nt, self._arrassign_cells(fragment))
        fn = compile_statement_fragment(
            fragment, [HOLE_MAGIC[0]] * count_holes(fragment))
        cells = []
        for snap in self.snaps:
            store = {k: (list(v) if type(v) is list else v)
                     for k, v in snap.items()}
            ctx = new_ctx(store, (), FRAGMENT_FUEL)
            try:
                fn(ctx)
                cells.append(tuple(self._cell_value(store, n)
                                   for n in self.read_later))
            except InterpError:
                cells.append(_ERR)
        return (nt, tuple(cells))


def read_later_names(program: Program) -> tuple[str, ...]:
    """Names whose values after a slot are externally visible.

    Conservative: every name the program reads anywhere, plus (general
    dialect) all parameters since they are returned.
    """
    names = set(read_vars(program))
    if program.dialect.kind != GAMES:
        names.update(program.dialect.params)
    return tuple(sorted(names))


def grammar_for(program: Program) -> Grammar:
    """The search grammar for a program: its dialect's productions with the
    variable pool = names defined in the program plus the fixed v1..v4."""
    d = program.dialect
    pool = list(program_vars(program))
    for name in SYNTH_VAR_POOL:
        if name not in pool:
            pool.append(name)
    if d.kind == GAMES:
        return games_grammar(d.obs_dim, d.n_actions, tuple(pool))
    return general_grammar(d.scalars, d.arrays, tuple(pool))


def make_slot_context(program: Program, slot: LineSlot, evaluator: Evaluator,
                      context_cap: int = CONTEXT_CAP):
    dataset = evaluator.dataset
    read_later = read_later_names(program)
    if dataset is None:
        return None
    if program.dialect.kind == GAMES:
        obs = np.asarray([ex.input for ex in dataset.examples], dtype=np.float64)
        return SlotBatchContext(program, slot, obs, read_later)
    inputs = [ex.input for ex in dataset.examples]
    return SlotScalarContext(program, slot, inputs, evaluator.limits,
                             context_cap, read_later)


# ---------------------------------------------------------------------------
# Constant holes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantHole:
    path: tuple[int, ...]
    lo: float = DEFAULT_HOLE_BOUNDS[0]
    hi: float = DEFAULT_HOLE_BOUNDS[1]

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("hole bounds must satisfy lo < hi")


def find_holes(fragment: Ast,
               bounds: tuple[float, float] = DEFAULT_HOLE_BOUNDS) -> list[ConstantHole]:
    """Hole positions in depth-first left-to-right order (the order in which
    value vectors are consumed)."""
    holes: list[ConstantHole] = []

    def go(node: Ast, path: tuple[int, ...]) -> None:
        if node.prod == "hole":
            holes.append(ConstantHole(path, bounds[0], bounds[1]))
        for i, child in enumerate(node.children):
            go(child, path + (i,))

    go(fragment, ())
    return holes


def instantiate(fragment: Ast, values: Sequence[float]) -> Ast:
    """Replace holes positionally with literals; folds negated literals so
    rendered text round-trips structurally."""
    it = iter(values)

    def go(node: Ast) -> Ast:
        if node.prod == "hole":
            return Ast("num", payload=float(next(it)))
        if not node.children:
            return node
        children = tuple(go(c) for c in node.children)
        if node.prod == "neg" and children[0].prod == "num":
            return Ast("num", payload=-children[0].payload)
        return Ast(node.prod, children=children, payload=node.payload)

    out = go(fragment)
    leftover = next(it, None)
    if leftover is not None:
        raise ValueError("more values than holes")
    return out


def _lattice(lo: float, hi: float) -> list[float]:
    pts = [0.0, 1.0, 2.0, -1.0, 3.0, -2.0, 4.0, 5.0, -5.0, 10.0, -10.0, 0.5, lo, hi]
    out = []
    for p in pts:
        p = min(max(p, lo), hi)
        if p not in out:
            out.append(p)
    return out


def optimize_constants(fragment: Ast, objective: Callable[[Ast], float],
                       budget: int, rng_seed: int,
                       bounds: tuple[float, float] = DEFAULT_HOLE_BOUNDS,
                       stop_screen: Optional[Callable[[float], bool]] = None,
                       ) -> tuple[Ast, float, int]:
    """Budgeted derivative-free maximization of the fragment's hole values.

    Deterministic given the seed: a fixed lattice of small integers and the
    bounds first, then seeded uniform samples, then Gaussian refinement
    around the incumbent (with integer-rounded variants, since many holes
    live in integer positions like array indices).  Returns the best
    instantiation found, its objective, and evaluations used.

    ``stop_screen``, when given, is consulted after the lattice stage with
    the best score so far; returning True ends the run early (used to skip
    refining candidates that cannot enter the shortlist).
    """
    holes = find_holes(fragment, bounds)
    if not holes:
        raise ValueError("fragment has no constant holes")
    if budget < 1:
        raise ValueError("budget must be at least 1")
    h = len(holes)
    lo, hi = bounds
    rng = np.random.default_rng(rng_seed)

    best_vals: Optional[tuple] = None
    best_score = -float("inf")
    evals = 0

    def try_vals(vals: Sequence[float]) -> bool:
        nonlocal best_vals, best_score, evals
        if evals >= budget:
            return False
        vals = tuple(min(max(float(v), lo), hi) for v in vals)
        evals += 1
        score = objective(instantiate(fragment, vals))
        if score > best_score:
            best_score = score
            best_vals = vals
        return True

    # stage 1: deterministic lattice (same value in every hole)
    for p in _lattice(lo, hi):
        if not try_vals([p] * h):
            break
    if h > 1 and evals < budget:
        # a few mixed small-integer combinations
        small = [0.0, 1.0, 2.0, -1.0]
        for combo in product(small, repeat=h):
            if len(set(combo)) == 1:
                continue
            if not try_vals(combo):
                break
    if stop_screen is not None and stop_screen(best_score):
        return instantiate(fragment, best_vals), best_score, evals

    # stage 2: seeded uniform exploration
    explore = min(budget - evals, max(4, budget // 4))
    for _ in range(explore):
        if not try_vals(rng.uniform(lo, hi, size=h)):
            break

    # stage 3: Gaussian refinement around the incumbent
    sigma = (hi - lo) / 8.0
    while evals < budget:
        base = np.asarray(best_vals)
        cand = base + rng.normal(0.0, sigma, size=h)
        improved_before = best_score
        if not try_vals(cand):
            break
        if evals < budget:
            try_vals(np.round(cand))
        if best_score <= improved_before:
            sigma = max(sigma * 0.8, (hi - lo) / 512.0)
    return instantiate(fragment, best_vals), best_score, evals


# ---------------------------------------------------------------------------
# Per-line synthesis
# ---------------------------------------------------------------------------

def synth_line(program: Program, slot: LineSlot, evaluator: Evaluator,
               budget: Budget, rng_seed: int, *,
               k: int = 20,
               max_fragment_size: int = MAX_FRAGMENT_SIZE,
               hole_budget: int = 100,
               hole_bounds: tuple[float, float] = DEFAULT_HOLE_BOUNDS,
               context_cap: int = CONTEXT_CAP,
               record: Optional[dict] = None) -> Program:
    """Re-synthesize one line, holding the rest of the program fixed.

    Enumerates fragments rooted at the slot's nonterminal, scores each
    candidate by the evaluator's proxy with the fragment spliced into the
    whole program, keeps the k best, then returns the splice maximizing the
    real objective.  The input program is returned unchanged unless some
    candidate strictly improves the objective (ties keep the original).
    """
    if isinstance(budget, (int, float)):
        budget = Budget.seconds(float(budget))
    grammar = grammar_for(program)
    root = "C" if slot.kind == SLOT_CONDITION else "S"
    sctx = make_slot_context(program, slot, evaluator, context_cap)
    if sctx is not None:
        signature_fn = sctx.signature
    else:
        # no dataset (episodic-only evaluator): only structural dedup
        counter = [0]
        def signature_fn(frag: Ast, nt: str):
            counter[0] += 1
            return counter[0]

    kbest = KBestList(1 if evaluator.proxy_is_f else k)
    f_in: Optional[float] = None
    order_box = [0]

    def ensure_f_in() -> float:
        nonlocal f_in
        if f_in is None:
            f_in = evaluator.f(program)
        return f_in

    if evaluator.proxy_is_f:
        # the proxy IS the objective: candidates that cannot beat both the
        # shortlist floor and the input program's score are dead on arrival,
        # so example loops may stop early against this floor
        def admission_floor() -> float:
            floor = kbest.floor
            base = ensure_f_in()
            return base if floor is None else max(floor, base)
        slot_proxy = evaluator.make_slot_proxy(program, slot, admission_floor)
    else:
        admission_floor = None
        slot_proxy = evaluator.make_slot_proxy(program, slot)

    def on_candidate(frag: Ast, sig) -> None:
        order_box[0] += 1
        n_holes = count_holes(frag)
        if n_holes == 0:
            proxy = slot_proxy(frag)
            kbest.offer(proxy, frag, order_box[0], ast_size(frag))
            return
        if admission_floor is not None:
            # refine constants only when the lattice stage shows the
            # candidate can beat the incumbent
            baseline = admission_floor()
            def screen(best_so_far: float) -> bool:
                return best_so_far <= baseline
        else:
            screen = None
        inst, proxy, used = optimize_constants(
            frag, slot_proxy, hole_budget, _hole_seed(rng_seed, order_box[0]),
            bounds=hole_bounds, stop_screen=screen)
        budget.charge(used)
        kbest.offer(proxy, inst, order_box[0], ast_size(inst))

    result = enumerate_fragments(grammar, root, signature_fn, budget,
                                 on_candidate, max_size=max_fragment_size,
                                 prune=True)

    best_entry = None
    best_f = None
    if kbest.entries:
        f0 = ensure_f_in()
        scored = []
        for entry in kbest.entries:
            spliced = replace_slot(program, slot, entry.payload)
            f_val = entry.proxy if evaluator.proxy_is_f else evaluator.f(spliced)
            scored.append((f_val, entry.size, entry.order, spliced))
        scored.sort(key=lambda item: (-item[0], item[1], item[2]))
        f_val, _, _, spliced = scored[0]
        if f_val > f0:
            best_entry = spliced
            best_f = f_val
    if record is not None:
        record["status"] = result.status
        record["candidates"] = result.candidates
        record["improved"] = best_entry is not None
        record["f_before"] = f_in
        record["f_after"] = best_f if best_entry is not None else f_in
        record["best_proxy"] = max((e.proxy for e in kbest.entries), default=None)
        record["work_units"] = budget.used_units
    return best_entry if best_entry is not None else program


def _hole_seed(rng_seed: int, order: int) -> int:
    return int(np.random.SeedSequence((rng_seed, order)).generate_state(1)[0])
