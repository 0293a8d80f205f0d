"""``qcfalloc`` command line: compile, weights, simulate, compare, convergence."""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass
from pathlib import Path

from .allocator import AllocationError, AnnealConfig, compile_program
from .cfg import CFGError, build_cfg
from .device import DeviceError, load_device
from .frontend import ParseError, emit_program, parse_program
from .metrics import load_histogram, parallel_sso, sso
from .simulator import SimulationError, run_many, run_noisy
from .weights import WeightSolveError, expected_executions, normalized_weights, prune_infinite_loops

_ERRORS = (
    ParseError, CFGError, DeviceError, AllocationError, SimulationError, WeightSolveError,
    ValueError, OSError,
)


@dataclass(frozen=True)
class CompileConfig:
    device_path: str
    seed: int = 0
    iterations: int = 20000
    restarts: int = 4
    cf_unaware: bool = False
    default_branch_probability: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if not 0.0 <= self.default_branch_probability <= 1.0:
            raise ValueError("default branch probability must be in [0, 1]")


def _read_program(path: str):
    return parse_program(Path(path).read_text(), source_name=path)


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_compile(args) -> int:
    cfg = CompileConfig(args.device, args.seed, args.iterations, args.restarts, args.cf_unaware,
                        args.default_probability)
    program = _read_program(args.input)
    device = load_device(cfg.device_path)
    anneal = AnnealConfig(iterations=cfg.iterations, restarts=cfg.restarts, seed=cfg.seed)
    result = compile_program(program, device, anneal, cf_unaware=cfg.cf_unaware,
                             default_probability=cfg.default_branch_probability)
    _write(emit_program(result.program), args.output)
    mapping = " ".join(f"{l}->{p}" for l, p in sorted(result.entry_mapping.l2p.items()))
    mode = "cf-unaware" if cfg.cf_unaware else "cf-aware"
    print(f"mode={mode} cost={result.cost:.6f} swaps={result.swap_count} "
          f"trampolines={len(result.trampolines)}", file=sys.stderr)
    print(f"entry mapping: {mapping}", file=sys.stderr)
    return 0


def cmd_weights(args) -> int:
    program = _read_program(args.input)
    cfg = prune_infinite_loops(build_cfg(program, args.default_probability))
    weights = expected_executions(cfg).weights
    norm = normalized_weights(weights) if args.normalized else None
    lines = []
    if args.csv:
        lines.append("block,weight" + (",normalized" if norm else ""))
        for b, f in weights.items():
            lines.append(f"{b},{f:.10g}" + (f",{norm[b]:.10g}" if norm else ""))
    else:
        width = max(len(b) for b in weights)
        for b, f in weights.items():
            lines.append(f"{b:<{width}}  {f:.6f}" + (f"  {norm[b]:.6f}" if norm else ""))
    _write("\n".join(lines) + "\n", args.output)
    return 0


def cmd_simulate(args) -> int:
    program = _read_program(args.input)
    if args.noisy:
        if not args.device:
            raise ValueError("--noisy requires --device")
        result = run_noisy(program, args.n_qubits, load_device(args.device), args.trials, args.seed,
                           args.noise_scale)
    else:
        result = run_many(program, args.n_qubits, args.trials, args.seed)
    _write(result.histogram.to_csv(), args.output)
    if args.blocks:
        rows = ["block,mean_executions"] + [f"{b},{f:.10g}" for b, f in result.block_frequencies.items()]
        Path(args.blocks).write_text("\n".join(rows) + "\n")
    return 0


def cmd_compare(args) -> int:
    value = sso(load_histogram(args.expected), load_histogram(args.measured))
    print(round(value, 10))
    return 0


def cmd_convergence(args) -> int:
    program = _read_program(args.input)
    ns = [int(x) for x in args.ns.split(",") if x.strip()]
    if not ns or min(ns) < 1:
        raise ValueError("--ns needs positive trial counts")
    rows = ["n,sso"] + [f"{n},{v:.10g}" for n, v in parallel_sso(program, ns, args.repeats, args.seed)]
    _write("\n".join(rows) + "\n", args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qcfalloc", description="Control-flow-aware qubit allocation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="allocate a program onto a device")
    p.add_argument("input")
    p.add_argument("--device", required=True, help="device JSON file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iterations", type=int, default=20000, help="annealing steps per restart")
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--cf-unaware", action="store_true", help="uniform weights and eager swap inversion")
    p.add_argument("--default-probability", type=float, default=0.5)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("weights", help="print expected block execution counts")
    p.add_argument("input")
    p.add_argument("--default-probability", type=float, default=0.5)
    p.add_argument("--normalized", action="store_true", help="add a column of weights summing to 1")
    p.add_argument("--csv", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("simulate", help="sample a program on the state-vector simulator")
    p.add_argument("input")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-qubits", type=int)
    p.add_argument("--noisy", action="store_true")
    p.add_argument("--device")
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("-o", "--output", help="histogram CSV (default: stdout)")
    p.add_argument("--blocks", help="write mean block executions CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="SSO between two histogram CSVs")
    p.add_argument("expected")
    p.add_argument("measured")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("convergence", help="parallel-SSO samples as n,sso CSV")
    p.add_argument("input")
    p.add_argument("--ns", default="1,10,50,100,200")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_convergence)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"qcfalloc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
