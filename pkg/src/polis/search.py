"""The outer optimization loop: repeated passes over all line slots.

Each pass re-synthesizes every current line in source order; the loop exits
when a full pass leaves the objective unchanged (a local optimum) or the
overall budget runs out.  Restarts rerun the whole search from the original
program against a freshly drawn dataset and keep the best result under a
common held-out evaluation.
"""

from __future__ import annotations

import difflib
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bus import Budget, CONTEXT_CAP, DEFAULT_HOLE_BOUNDS, MAX_FRAGMENT_SIZE, \
    synth_line
from .evaluation import Evaluator
from .interp import DEFAULT_LIMITS, RuntimeLimits
from .program import Program, line_slots, render

REPORT_SCHEMA = "polis-report/1"


@dataclass(frozen=True)
class SearchConfig:
    """Budgets and knobs for a run.

    ``t``/``t_l`` are wall-clock seconds (overall and per line).  When
    ``units``/``units_per_line`` are set they replace the wall clock with a
    deterministic work-unit budget (one unit per candidate evaluation), which
    makes runs bit-for-bit reproducible.
    """

    t: float
    t_l: float
    k: int = 20
    restarts: int = 5
    seed: int = 0
    limits: RuntimeLimits = DEFAULT_LIMITS
    max_fragment_size: int = MAX_FRAGMENT_SIZE
    hole_budget: int = 100
    hole_bounds: tuple[float, float] = DEFAULT_HOLE_BOUNDS
    context_cap: int = CONTEXT_CAP
    units: Optional[int] = None
    units_per_line: Optional[int] = None

    def __post_init__(self):
        if self.t < 0 or self.t_l < 0:
            raise ValueError("time limits must be nonnegative")
        if self.t_l > self.t:
            raise ValueError("per-line time limit cannot exceed the overall limit")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if (self.units is None) != (self.units_per_line is None):
            raise ValueError("set both units and units_per_line, or neither")


class _Pool:
    """Shared overall budget, sliced into per-line budgets."""

    def __init__(self, config: SearchConfig):
        self.unit_mode = config.units is not None
        if self.unit_mode:
            self.remaining = float(config.units)
            self.per_line = float(config.units_per_line)
        else:
            self.deadline = time.monotonic() + config.t
            self.per_line = config.t_l

    def expired(self) -> bool:
        if self.unit_mode:
            return self.remaining <= 0
        return time.monotonic() >= self.deadline

    def line_budget(self) -> Budget:
        if self.unit_mode:
            return Budget.units(min(self.per_line, self.remaining))
        return Budget(min(time.monotonic() + self.per_line, self.deadline), None)

    def deduct(self, budget: Budget) -> None:
        if self.unit_mode:
            self.remaining -= budget.used_units


@dataclass
class SlotRecord:
    slot_id: str
    improved: bool = False
    f_before: Optional[float] = None
    f_after: Optional[float] = None
    best_proxy: Optional[float] = None
    candidates: int = 0
    status: str = ""

    def to_json(self) -> dict:
        return {
            "slot": self.slot_id,
            "improved": self.improved,
            "f_before": self.f_before,
            "f_after": self.f_after,
            "best_proxy": self.best_proxy,
            "candidates": self.candidates,
            "status": self.status,
        }


@dataclass
class PassRecord:
    slots: list[SlotRecord] = field(default_factory=list)
    f_start: Optional[float] = None
    f_end: Optional[float] = None

    def to_json(self) -> dict:
        return {"f_start": self.f_start, "f_end": self.f_end,
                "slots": [s.to_json() for s in self.slots]}


@dataclass
class RestartRecord:
    index: int
    passes: list[PassRecord] = field(default_factory=list)
    initial_f: Optional[float] = None
    final_f: Optional[float] = None
    heldout_f: Optional[float] = None
    edited_lines: Optional[int] = None
    stopped: str = ""  # local-optimum | timeout

    def to_json(self) -> dict:
        return {
            "restart": self.index,
            "initial_f": self.initial_f,
            "final_f": self.final_f,
            "heldout_f": self.heldout_f,
            "edited_lines": self.edited_lines,
            "stopped": self.stopped,
            "passes": [p.to_json() for p in self.passes],
        }


@dataclass
class SearchReport:
    """Logical trace of a run: per-restart passes, per-slot outcomes, initial
    and final objective values, and the edited-line count.

    Wall-clock timings are kept out of the report so identical seeded runs
    serialize identically; they are surfaced separately by the CLI.
    """

    initial_f: Optional[float] = None
    final_f: Optional[float] = None
    edited_lines: int = 0
    best_restart: Optional[int] = None
    best_program_text: str = ""
    restarts: list[RestartRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    evaluator: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "initial_f": self.initial_f,
            "final_f": self.final_f,
            "edited_lines": self.edited_lines,
            "best_restart": self.best_restart,
            "config": self.config,
            "evaluator": self.evaluator,
            "best_program": self.best_program_text,
            "restarts": [r.to_json() for r in self.restarts],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"


def _slot_seed(seed: int, restart: int, pass_idx: int, slot_idx: int) -> int:
    return int(np.random.SeedSequence(
        (seed, restart, pass_idx, slot_idx)).generate_state(1)[0])


def _config_json(config: SearchConfig) -> dict:
    return {
        "t": config.t, "t_l": config.t_l, "k": config.k,
        "restarts": config.restarts, "seed": config.seed,
        "fuel": config.limits.fuel,
        "max_fragment_size": config.max_fragment_size,
        "hole_budget": config.hole_budget,
        "units": config.units, "units_per_line": config.units_per_line,
    }


def _run_single(program: Program, evaluator: Evaluator, config: SearchConfig,
                pool: _Pool, restart_idx: int) -> tuple[Program, RestartRecord]:
    record = RestartRecord(index=restart_idx)
    current = program
    record.initial_f = evaluator.f(current)
    pass_idx = 0
    record.stopped = "timeout"
    while not pool.expired():
        f_before_pass = evaluator.f(current)
        pass_record = PassRecord(f_start=f_before_pass)
        record.passes.append(pass_record)
        interrupted = False
        slot_idx = 0
        # iterate positionally over the evolving slot list: a statement
        # replacement may grow or shrink the program mid-pass
        while slot_idx < len(line_slots(current)):
            if pool.expired():
                interrupted = True
                break
            slot = line_slots(current)[slot_idx]
            budget = pool.line_budget()
            info: dict = {}
            current = synth_line(
                current, slot, evaluator, budget,
                _slot_seed(config.seed, restart_idx, pass_idx, slot_idx),
                k=config.k,
                max_fragment_size=config.max_fragment_size,
                hole_budget=config.hole_budget,
                hole_bounds=config.hole_bounds,
                context_cap=config.context_cap,
                record=info)
            pool.deduct(budget)
            pass_record.slots.append(SlotRecord(
                slot_id=slot.slot_id,
                improved=info.get("improved", False),
                f_before=info.get("f_before"),
                f_after=info.get("f_after"),
                best_proxy=info.get("best_proxy"),
                candidates=info.get("candidates", 0),
                status=info.get("status", ""),
            ))
            slot_idx += 1
        f_after_pass = evaluator.f(current)
        pass_record.f_end = f_after_pass
        pass_idx += 1
        if not interrupted and f_after_pass == f_before_pass:
            record.stopped = "local-optimum"
            break
    record.final_f = evaluator.f(current)
    record.edited_lines = count_edited_lines(program, current)
    return current, record


def polis(program: Program, evaluator: Evaluator,
          config: SearchConfig) -> tuple[Program, SearchReport]:
    """Single-dataset hill climbing over line slots (no restarts)."""
    pool = _Pool(config)
    best, record = _run_single(program, evaluator, config, pool, 0)
    report = SearchReport(
        initial_f=record.initial_f,
        final_f=record.final_f,
        edited_lines=count_edited_lines(program, best),
        best_restart=0,
        best_program_text=render(best),
        restarts=[record],
        config=_config_json(config),
        evaluator=evaluator.describe(),
    )
    return best, report


def run_with_restarts(program: Program,
                      evaluator_factory: Callable[[int], Evaluator],
                      config: SearchConfig,
                      final_evaluator: Optional[Evaluator] = None
                      ) -> tuple[Program, SearchReport]:
    """Run up to ``config.restarts`` searches from the original program, each
    against a freshly drawn evaluator, sharing the overall budget.

    The winner is chosen by a common held-out evaluation (``final_evaluator``;
    defaults to ``evaluator_factory(config.restarts)``), with ties going to
    the earlier restart.
    """
    pool = _Pool(config)
    if final_evaluator is None:
        final_evaluator = evaluator_factory(config.restarts)
    results: list[tuple[Program, RestartRecord]] = []
    for r in range(config.restarts):
        if r > 0 and pool.expired():
            break
        evaluator = evaluator_factory(r)
        results.append(_run_single(program, evaluator, config, pool, r))

    best_idx = 0
    best_f = None
    for i, (candidate, record) in enumerate(results):
        f_val = final_evaluator.f(candidate)
        record.heldout_f = f_val
        if best_f is None or f_val > best_f:
            best_f = f_val
            best_idx = i
    best_program = results[best_idx][0]
    report = SearchReport(
        initial_f=final_evaluator.f(program),
        final_f=best_f,
        edited_lines=count_edited_lines(program, best_program),
        best_restart=best_idx,
        best_program_text=render(best_program),
        restarts=[rec for _, rec in results],
        config=_config_json(config),
        evaluator=final_evaluator.describe(),
    )
    return best_program, report


def count_edited_lines(before: Program, after: Program) -> int:
    """Longest-common-subsequence line diff between canonical renderings:
    lines inserted + deleted + modified."""
    a = render(before).splitlines()
    b = render(after).splitlines()
    total = 0
    matcher = difflib.SequenceMatcher(a=a, b=b, autojunk=False)
    for op, i1, i2, j1, j2 in matcher.get_opcodes():
        if op == "equal":
            continue
        if op == "insert":
            total += j2 - j1
        elif op == "delete":
            total += i2 - i1
        else:  # replace
            total += max(i2 - i1, j2 - j1)
    return total
