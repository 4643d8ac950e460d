"""Line-local program improvement against a real-valued objective.

The engine hill-climbs in line space: each editable line (a header condition
or a leaf assignment) is re-synthesized in isolation by size-ordered
bottom-up enumeration while the rest of the program stays fixed, and the
best-scoring replacement is kept.  Passes repeat until a local optimum or
the time budget.
"""

from .grammar import Ast, Grammar, Production, ast_size, load_grammar_file, \
    load_grammar_text
from .program import Dialect, LineSlot, ParseError, Program, SlotError, \
    line_slots, parse_program, render, replace_slot
from .interp import ExecOutcome, InterpError, RuntimeLimits, run_general, \
    run_policy
from .evaluation import Dataset, Evaluator, IOExample, KBestList, agreement, \
    count_correct, episodic_score, highlights_select, load_dataset, \
    negative_distance, save_dataset
from .bus import Budget, ConstantHole, ProgramBank, enumerate_fragments, \
    optimize_constants, synth_line
from .search import SearchConfig, SearchReport, count_edited_lines, polis, \
    run_with_restarts
from .envs import MiniHighway, MiniLander, collect_traces, collision_count

__version__ = "0.1.0"

__all__ = [
    "Ast", "Grammar", "Production", "ast_size", "load_grammar_file",
    "load_grammar_text",
    "Dialect", "LineSlot", "ParseError", "Program", "SlotError",
    "line_slots", "parse_program", "render", "replace_slot",
    "ExecOutcome", "InterpError", "RuntimeLimits", "run_general", "run_policy",
    "Dataset", "Evaluator", "IOExample", "KBestList", "agreement",
    "count_correct", "episodic_score", "highlights_select", "load_dataset",
    "negative_distance", "save_dataset",
    "Budget", "ConstantHole", "ProgramBank", "enumerate_fragments",
    "optimize_constants", "synth_line",
    "SearchConfig", "SearchReport", "count_edited_lines", "polis",
    "run_with_restarts",
    "MiniHighway", "MiniLander", "collect_traces", "collision_count",
    "__version__",
]
