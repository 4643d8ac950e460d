"""Objectives, datasets and candidate bookkeeping for the line synthesizer.

Two kinds of scoring exist: the real objective (episodic game score, count of
correct examples, or negated distance) and, for the expensive episodic case,
a cheap proxy (action agreement against an oracle's traces) used to shortlist
candidates.  Both are maximization objectives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .fasteval import BatchPolicy, max_straightline_cost
from .interp import DEFAULT_LIMITS, CompiledProgram, RuntimeLimits
from .program import GAMES, GENERAL, Program, render, replace_slot

ERROR_PENALTY = -1.0e6
MATCH_TOL = 1e-9

DATASET_FORMAT = "polis-dataset"
DATASET_VERSION = 1


@dataclass(frozen=True)
class IOExample:
    """One input-output pair: an observation mapped to an oracle action, or
    an argument tuple mapped to its expected final values."""
    input: tuple
    output: object
    q_values: Optional[tuple] = None


@dataclass(frozen=True)
class Dataset:
    examples: tuple[IOExample, ...]
    task: str = "action"  # "action" (games) | "args" (general)
    provenance: str = "handwritten"
    seed: Optional[int] = None

    def __len__(self) -> int:
        return len(self.examples)

    def require_nonempty(self) -> None:
        if not self.examples:
            raise ValueError("dataset is empty")


def _to_jsonable(value):
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def _freeze(value):
    if isinstance(value, list):
        return tuple(_freeze(v) for v in value)
    return value


def save_dataset(dataset: Dataset, path) -> None:
    """Write line-delimited records with full numeric round-trip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format": DATASET_FORMAT,
            "version": DATASET_VERSION,
            "task": dataset.task,
            "provenance": dataset.provenance,
            "seed": dataset.seed,
        }
        fh.write(json.dumps(header) + "\n")
        for ex in dataset.examples:
            rec = {"input": _to_jsonable(ex.input), "output": _to_jsonable(ex.output)}
            if ex.q_values is not None:
                rec["q"] = _to_jsonable(ex.q_values)
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty dataset file")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise ValueError(f"{path}: not a dataset file")
    examples = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        examples.append(IOExample(
            input=_freeze(rec["input"]),
            output=_freeze(rec["output"]),
            q_values=_freeze(rec["q"]) if "q" in rec else None,
        ))
    return Dataset(
        examples=tuple(examples),
        task=header.get("task", "action"),
        provenance=header.get("provenance", "handwritten"),
        seed=header.get("seed"),
    )


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------

def _games_matrix(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    obs = np.asarray([ex.input for ex in dataset.examples], dtype=np.float64)
    labels = np.asarray([int(ex.output) for ex in dataset.examples], dtype=np.int64)
    return obs, labels


def agreement(program: Program, dataset: Dataset,
              limits: RuntimeLimits = DEFAULT_LIMITS) -> float:
    """Fraction of examples where the program runs ok and picks the oracle's
    action; runtime errors count as disagreement."""
    dataset.require_nonempty()
    obs, labels = _games_matrix(dataset)
    return agreement_on_matrix(program, obs, labels, limits)


def agreement_on_matrix(program: Program, obs: np.ndarray, labels: np.ndarray,
                        limits: RuntimeLimits = DEFAULT_LIMITS) -> float:
    if max_straightline_cost(program) < limits.fuel:
        actions, err = BatchPolicy(program).run(obs)
        return float(np.mean((actions == labels) & ~err))
    compiled = CompiledProgram(program)
    hits = 0
    for row, label in zip(obs, labels):
        outcome = compiled.run_policy(row, limits)
        if outcome.ok and outcome.result == int(label):
            hits += 1
    return hits / len(labels)


def _outputs_match(produced: tuple, expected: tuple) -> bool:
    if len(produced) != len(expected):
        return False
    for p, e in zip(produced, expected):
        if isinstance(e, (tuple, list)):
            if not isinstance(p, (tuple, list)) or len(p) != len(e):
                return False
            if any(abs(pv - ev) > MATCH_TOL for pv, ev in zip(p, e)):
                return False
        else:
            if isinstance(p, (tuple, list)) or abs(p - e) > MATCH_TOL:
                return False
    return True


def count_correct(program: Program, dataset: Dataset,
                  limits: RuntimeLimits = DEFAULT_LIMITS) -> int:
    """Number of examples mapped exactly (within 1e-9) to the expected values."""
    dataset.require_nonempty()
    compiled = CompiledProgram(program)
    correct = 0
    for ex in dataset.examples:
        outcome = compiled.run_general(ex.input, limits)
        if outcome.ok and _outputs_match(outcome.result, ex.output):
            correct += 1
    return correct


def _example_distance(produced: tuple, expected: tuple) -> Optional[float]:
    """Sum of absolute element differences; None on shape mismatch."""
    if len(produced) != len(expected):
        return None
    total = 0.0
    for p, e in zip(produced, expected):
        if isinstance(e, (tuple, list)):
            if not isinstance(p, (tuple, list)) or len(p) != len(e):
                return None
            total += sum(abs(pv - ev) for pv, ev in zip(p, e))
        else:
            if isinstance(p, (tuple, list)):
                return None
            total += abs(p - e)
    return total


def negative_distance(program: Program, dataset: Dataset,
                      limits: RuntimeLimits = DEFAULT_LIMITS,
                      error_penalty: float = ERROR_PENALTY) -> float:
    """Negated sum of absolute differences; errors and shape mismatches
    contribute the error penalty for their example."""
    dataset.require_nonempty()
    compiled = CompiledProgram(program)
    total = 0.0
    for ex in dataset.examples:
        outcome = compiled.run_general(ex.input, limits)
        if not outcome.ok:
            total += error_penalty
            continue
        dist = _example_distance(outcome.result, ex.output)
        if dist is None:
            total += error_penalty
        else:
            total -= dist
    return total


def episodic_score(program: Program, env_factory: Callable[[], object],
                   seeds: Sequence[int],
                   limits: RuntimeLimits = DEFAULT_LIMITS) -> float:
    """Mean accumulated reward over one episode per seed.  A runtime error
    mid-episode ends that episode with its score so far."""
    if not seeds:
        raise ValueError("episodic evaluation needs at least one seed")
    compiled = CompiledProgram(program)
    totals = []
    for seed in seeds:
        env = env_factory()
        obs = env.reset(seed)
        total = 0.0
        for _ in range(env.max_steps):
            outcome = compiled.run_policy(obs, limits)
            if not outcome.ok:
                break
            obs, reward, done = env.step(outcome.result)
            total += reward
            if done:
                break
        totals.append(total)
    return float(np.mean(totals))


def highlights_select(dataset: Dataset, m: int) -> Dataset:
    """The m examples with the largest best-to-worst action-value spread.

    Order among the selected follows the input dataset; ties break toward the
    earlier example.  Selecting from a dataset of at most m examples is the
    identity.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    for ex in dataset.examples:
        if ex.q_values is None:
            raise ValueError("highlights selection needs q_values on every example")
    if len(dataset.examples) <= m:
        return dataset
    spreads = [max(ex.q_values) - min(ex.q_values) for ex in dataset.examples]
    ranked = sorted(range(len(spreads)), key=lambda i: (-spreads[i], i))
    chosen = sorted(ranked[:m])
    return replace(dataset, examples=tuple(dataset.examples[i] for i in chosen))


# ---------------------------------------------------------------------------
# K-best shortlist
# ---------------------------------------------------------------------------

@dataclass
class KBestEntry:
    proxy: float
    payload: object
    order: int
    size: int


class KBestList:
    """The k highest-proxy candidates seen so far.

    Admission is by proxy score alone; equal-proxy newcomers are rejected so
    the invariant "min kept proxy >= any rejected proxy at rejection time"
    holds.  When a newcomer evicts, the least attractive minimum-proxy entry
    (largest fragment, then latest arrival) leaves.
    """

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.k = k
        self.entries: list[KBestEntry] = []

    def offer(self, proxy: float, payload: object, order: int, size: int) -> bool:
        if len(self.entries) < self.k:
            self.entries.append(KBestEntry(proxy, payload, order, size))
            return True
        worst_idx = min(range(len(self.entries)),
                        key=lambda i: (self.entries[i].proxy,
                                       -self.entries[i].size,
                                       -self.entries[i].order))
        if proxy > self.entries[worst_idx].proxy:
            self.entries[worst_idx] = KBestEntry(proxy, payload, order, size)
            return True
        return False

    @property
    def floor(self) -> Optional[float]:
        if len(self.entries) < self.k:
            return None
        return min(e.proxy for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

class Evaluator:
    """Scoring bundle: a cheap proxy for shortlisting plus the objective F."""

    dialect: str
    proxy_is_f: bool
    dataset: Optional[Dataset]
    limits: RuntimeLimits

    def proxy(self, program: Program) -> float:
        raise NotImplementedError

    def f(self, program: Program) -> float:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    def make_slot_proxy(self, program: Program, slot,
                        floor: Optional[Callable[[], float]] = None) -> Callable:
        """Callable scoring a candidate fragment spliced into ``slot``.

        The default splices and rescores the whole program; subclasses
        override with patched-runner fast paths.  ``floor`` (when given)
        returns the current shortlist admission floor: implementations may
        stop scoring a candidate early once its best achievable score cannot
        exceed the floor, returning an upper bound that is itself <= floor.
        """
        def slot_proxy(fragment):
            return self.proxy(replace_slot(program, slot, fragment))
        return slot_proxy


class AgreementEpisodicEvaluator(Evaluator):
    """Action-agreement proxy with episodic game score as the objective."""

    def __init__(self, dataset: Dataset, env_factory: Callable[[], object],
                 f_seeds: Sequence[int], limits: RuntimeLimits = DEFAULT_LIMITS):
        dataset.require_nonempty()
        self.dialect = GAMES
        self.proxy_is_f = False
        self.dataset = dataset
        self.limits = limits
        self.env_factory = env_factory
        self.f_seeds = tuple(f_seeds)
        self._obs, self._labels = _games_matrix(dataset)
        self._f_cache: dict[str, float] = {}

    def proxy(self, program: Program) -> float:
        return agreement_on_matrix(program, self._obs, self._labels, self.limits)

    def f(self, program: Program) -> float:
        key = render(program)
        hit = self._f_cache.get(key)
        if hit is None:
            hit = episodic_score(program, self.env_factory, self.f_seeds, self.limits)
            self._f_cache[key] = hit
        return hit

    def describe(self) -> dict:
        return {"objective": "score", "proxy": "agreement",
                "examples": len(self.dataset), "f_episodes": len(self.f_seeds)}


class CountCorrectEvaluator(Evaluator):
    def __init__(self, dataset: Dataset, limits: RuntimeLimits = DEFAULT_LIMITS):
        dataset.require_nonempty()
        self.dialect = GENERAL
        self.proxy_is_f = True
        self.dataset = dataset
        self.limits = limits

    def proxy(self, program: Program) -> float:
        return float(count_correct(program, self.dataset, self.limits))

    f = proxy

    def make_slot_proxy(self, program: Program, slot,
                        floor: Optional[Callable[[], float]] = None) -> Callable:
        runner = CompiledProgram(program, slot=slot)
        examples = self.dataset.examples
        limits = self.limits
        total = len(examples)

        def slot_proxy(fragment):
            runner.set_fragment(fragment)
            correct = 0
            cut = floor() if floor is not None else None
            for done, ex in enumerate(examples):
                if cut is not None and correct + (total - done) <= cut:
                    return float(correct + (total - done))  # unreachable floor
                outcome = runner.run_general(ex.input, limits)
                if outcome.ok and _outputs_match(outcome.result, ex.output):
                    correct += 1
            return float(correct)
        return slot_proxy

    def describe(self) -> dict:
        return {"objective": "count", "examples": len(self.dataset)}


class NegativeDistanceEvaluator(Evaluator):
    def __init__(self, dataset: Dataset, limits: RuntimeLimits = DEFAULT_LIMITS,
                 error_penalty: float = ERROR_PENALTY):
        dataset.require_nonempty()
        self.dialect = GENERAL
        self.proxy_is_f = True
        self.dataset = dataset
        self.limits = limits
        self.error_penalty = error_penalty

    def proxy(self, program: Program) -> float:
        return negative_distance(program, self.dataset, self.limits, self.error_penalty)

    f = proxy

    def make_slot_proxy(self, program: Program, slot,
                        floor: Optional[Callable[[], float]] = None) -> Callable:
        runner = CompiledProgram(program, slot=slot)
        examples = self.dataset.examples
        limits = self.limits
        penalty = self.error_penalty

        def slot_proxy(fragment):
            runner.set_fragment(fragment)
            total = 0.0
            cut = floor() if floor is not None else None
            for ex in examples:
                # contributions are never positive, so the running total is an
                # upper bound on the final score
                if cut is not None and total <= cut:
                    return total
                outcome = runner.run_general(ex.input, limits)
                if not outcome.ok:
                    total += penalty
                    continue
                dist = _example_distance(outcome.result, ex.output)
                total += penalty if dist is None else -dist
            return total
        return slot_proxy

    def describe(self) -> dict:
        return {"objective": "distance", "examples": len(self.dataset),
                "error_penalty": self.error_penalty}


class EpisodicEvaluator(Evaluator):
    """Game score as both shortlist key and objective (no oracle dataset)."""

    def __init__(self, env_factory: Callable[[], object], seeds: Sequence[int],
                 limits: RuntimeLimits = DEFAULT_LIMITS):
        self.dialect = GAMES
        self.proxy_is_f = True
        self.dataset = None
        self.limits = limits
        self.env_factory = env_factory
        self.f_seeds = tuple(seeds)
        self._f_cache: dict[str, float] = {}

    def f(self, program: Program) -> float:
        key = render(program)
        hit = self._f_cache.get(key)
        if hit is None:
            hit = episodic_score(program, self.env_factory, self.f_seeds, self.limits)
            self._f_cache[key] = hit
        return hit

    proxy = f

    def describe(self) -> dict:
        return {"objective": "score", "f_episodes": len(self.f_seeds)}
