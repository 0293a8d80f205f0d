"""Control-flow-aware qubit allocation for a Quil subset.

The pipeline is parse -> CFG -> block weights -> dominators -> allocation,
with a state-vector simulator and overlap metrics for checking the result.
"""

from .frontend import ParseError, Program, emit_program, parse_program
from .cfg import ControlFlowGraph, build_cfg, cfg_to_program, eliminate_dead_code
from .weights import BlockWeights, expected_executions, normalized_weights, prune_infinite_loops
from .dominators import DominatorTree, compute_dominators
from .device import DeviceGraph, load_device
from .allocator import AllocatedProgram, AnnealConfig, allocate, allocate_cf_unaware, compile_program
from .simulator import run, run_many, run_noisy
from .metrics import Histogram, r_squared, sso

__all__ = [
    "AllocatedProgram",
    "AnnealConfig",
    "BlockWeights",
    "ControlFlowGraph",
    "DeviceGraph",
    "DominatorTree",
    "Histogram",
    "ParseError",
    "Program",
    "allocate",
    "allocate_cf_unaware",
    "build_cfg",
    "cfg_to_program",
    "compile_program",
    "compute_dominators",
    "eliminate_dead_code",
    "emit_program",
    "expected_executions",
    "load_device",
    "normalized_weights",
    "parse_program",
    "prune_infinite_loops",
    "r_squared",
    "run",
    "run_many",
    "run_noisy",
    "sso",
]
