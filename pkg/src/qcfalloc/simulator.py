"""Dense state-vector simulator for control-flow programs.

Qubit ``k`` of the (compacted) register is bit ``k`` of the basis index.
Programs may use arbitrary qubit ids; the simulator packs the ids that actually
occur into consecutive positions, so a program on physical qubits 0..17 that
touches 16 of them costs a 2**16 vector.

``run_many`` gives trial ``i`` its own generator seeded with
``derive_seed(seed, i)`` and advances trials that have seen identical
measurement outcomes (and noise events) together on one shared state vector.
Trial ``i`` of ``run_many`` is therefore bit-identical to
``run(p, seed=derive_seed(seed, i))``.
"""

from __future__ import annotations

import cmath
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .cfg import build_cfg
from .device import DeviceGraph
from .frontend import BranchProbPragma, CondJump, Declare, Gate, Halt, Jump, Label, Measure, MemRef, Program
from .metrics import Histogram
from .rng import derive_seed

MAX_QUBITS = 20
DEFAULT_MAX_STEPS = 10**6
_NORM_TOL = 1e-9


class SimulationError(RuntimeError):
    pass


# -- kernels ------------------------------------------------------------------

def _view1(psi: np.ndarray, n: int, k: int) -> np.ndarray:
    return psi.reshape(1 << (n - k - 1), 2, 1 << k)


def _view2(psi: np.ndarray, n: int, a: int, b: int) -> tuple[np.ndarray, bool]:
    hi, lo = (a, b) if a > b else (b, a)
    v = psi.reshape(1 << (n - hi - 1), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    return v, a > b


def rx_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def rz_matrix(phi: float) -> np.ndarray:
    return np.array([[cmath.exp(-0.5j * phi), 0], [0, cmath.exp(0.5j * phi)]], dtype=complex)


def _apply_matrix(psi: np.ndarray, n: int, k: int, m: np.ndarray) -> None:
    v = _view1(psi, n, k)
    a0 = v[:, 0, :].copy()
    a1 = v[:, 1, :]
    v[:, 0, :] = m[0, 0] * a0 + m[0, 1] * a1
    v[:, 1, :] = m[1, 0] * a0 + m[1, 1] * a1


def _apply_rz(psi: np.ndarray, n: int, k: int, phi: float) -> None:
    v = _view1(psi, n, k)
    v[:, 0, :] *= cmath.exp(-0.5j * phi)
    v[:, 1, :] *= cmath.exp(0.5j * phi)


def _apply_cz(psi: np.ndarray, n: int, a: int, b: int) -> None:
    v, _ = _view2(psi, n, a, b)
    v[:, 1, :, 1, :] *= -1


def _apply_swap(psi: np.ndarray, n: int, a: int, b: int) -> None:
    v, _ = _view2(psi, n, a, b)
    tmp = v[:, 0, :, 1, :].copy()
    v[:, 0, :, 1, :] = v[:, 1, :, 0, :]
    v[:, 1, :, 0, :] = tmp


def _apply_pauli(psi: np.ndarray, n: int, k: int, which: int) -> None:
    """which: 0 = X, 1 = Y, 2 = Z."""
    v = _view1(psi, n, k)
    if which == 2:
        v[:, 1, :] *= -1
        return
    a0 = v[:, 0, :].copy()
    if which == 0:
        v[:, 0, :] = v[:, 1, :]
        v[:, 1, :] = a0
    else:
        v[:, 0, :] = -1j * v[:, 1, :]
        v[:, 1, :] = 1j * a0


def _prob_one(psi: np.ndarray, n: int, k: int) -> float:
    v = _view1(psi, n, k)[:, 1, :]
    return float(np.vdot(v, v).real)


def _collapse(psi: np.ndarray, n: int, k: int, outcome: int, prob: float) -> None:
    v = _view1(psi, n, k)
    v[:, 1 - outcome, :] = 0
    if prob > 0:
        psi *= 1.0 / math.sqrt(prob)


def _apply_gate_dense(psi: np.ndarray, n: int, name: str, params, pos: Sequence[int]) -> None:
    if name == "RX":
        _apply_matrix(psi, n, pos[0], rx_matrix(params[0]))
    elif name == "RZ":
        _apply_rz(psi, n, pos[0], params[0])
    elif name == "CZ":
        _apply_cz(psi, n, pos[0], pos[1])
    elif name == "SWAP":
        _apply_swap(psi, n, pos[0], pos[1])
    else:
        raise SimulationError(f"unknown gate {name}")


# -- single-state API ---------------------------------------------------------

@dataclass
class QuantumState:
    amplitudes: np.ndarray
    n_qubits: int
    memory: dict[MemRef, int] = field(default_factory=dict)
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    @classmethod
    def zero(cls, n_qubits: int, memory: Sequence[MemRef] = (), seed: int = 0) -> "QuantumState":
        if not 0 < n_qubits <= MAX_QUBITS:
            raise SimulationError(f"qubit count must be in 1..{MAX_QUBITS}")
        psi = np.zeros(1 << n_qubits, dtype=complex)
        psi[0] = 1.0
        return cls(psi, n_qubits, {m: 0 for m in memory}, random.Random(seed))

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def _check_qubits(state: QuantumState, qubits: Sequence[int]) -> None:
    for q in qubits:
        if not 0 <= q < state.n_qubits:
            raise SimulationError(f"qubit index {q} out of range for {state.n_qubits} qubits")


def apply_gate(state: QuantumState, g: Gate) -> QuantumState:
    _check_qubits(state, g.qubits)
    _apply_gate_dense(state.amplitudes, state.n_qubits, g.name, g.params, g.qubits)
    return state


def apply_pauli(state: QuantumState, q: int, which: str) -> QuantumState:
    _check_qubits(state, [q])
    _apply_pauli(state.amplitudes, state.n_qubits, q, "XYZ".index(which))
    return state


def measure(state: QuantumState, q: int, bit: MemRef) -> QuantumState:
    _check_qubits(state, [q])
    if bit not in state.memory:
        raise SimulationError(f"classical address {bit} out of range")
    p1 = _prob_one(state.amplitudes, state.n_qubits, q)
    outcome = 1 if state.rng.random() < p1 else 0
    _collapse(state.amplitudes, state.n_qubits, q, outcome, p1 if outcome else 1.0 - p1)
    state.memory[bit] = outcome
    return state


# -- program execution --------------------------------------------------------

@dataclass
class RunResult:
    readout: str
    block_trace: list[str]
    instruction_count: int


@dataclass
class SampleResult:
    histogram: Histogram
    block_frequencies: dict[str, float]
    trials: int


@dataclass
class NoiseModel:
    """Per-gate depolarizing-style Pauli errors and readout flips.

    After a gate with fidelity f an error event happens with probability
    ``(1 - f) * scale``; it gives every touched qubit a uniformly random
    X, Y or Z. Readout flips the recorded bit with probability
    ``(1 - f_ro) * scale``.
    """

    device: DeviceGraph
    scale: float = 1.0

    def gate_error(self, name: str, qubits: Sequence[int]) -> float:
        if len(qubits) == 1:
            f = self.device.gate_fidelity(qubits[0])
        elif name == "SWAP":
            f = self.device.swap_fidelity(*qubits)
        else:
            f = self.device.cz_fidelity(*qubits)
        return (1.0 - f) * self.scale

    def readout_flip(self, q: int) -> float:
        return (1.0 - self.device.measure_fidelity(q)) * self.scale


class _Compiled:
    """Program with labels resolved, classical bits indexed, qubits packed."""

    def __init__(self, p: Program, n_qubits: int | None):
        self.program = p
        self.instructions = p.instructions
        used = p.qubits
        if n_qubits is not None and used and used[-1] >= n_qubits:
            raise SimulationError(f"qubit index {used[-1]} >= n_qubits={n_qubits}")
        if len(used) > MAX_QUBITS:
            raise SimulationError(f"{len(used)} qubits exceeds the {MAX_QUBITS}-qubit limit")
        self.qubits = used
        self.pos = {q: i for i, q in enumerate(used)}
        self.n = max(1, len(used))
        self.bits = p.readout_bits()
        self.bit_index = {b: i for i, b in enumerate(self.bits)}
        self.labels = {ins.name: i for i, ins in enumerate(self.instructions) if isinstance(ins, Label)}
        cfg = build_cfg(p)
        self.block_ids = list(cfg.blocks)
        self.leaders = {blk.start: bid for bid, blk in cfg.blocks.items()}
        self.first = cfg.blocks[cfg.entry].start


class _Branch:
    __slots__ = ("psi", "mem", "pc", "trials", "trace", "steps")

    def __init__(self, psi, mem, pc, trials, trace, steps):
        self.psi = psi
        self.mem = mem
        self.pc = pc
        self.trials = trials
        self.trace = trace
        self.steps = steps

    def fork(self, trials, copy_state: bool) -> "_Branch":
        psi = self.psi.copy() if copy_state else self.psi
        return _Branch(psi, list(self.mem), self.pc, trials, list(self.trace), self.steps)


def _execute(c: _Compiled, rngs: Sequence[random.Random], noise: NoiseModel | None, max_steps: int):
    """Yield (trial ids, memory, trace, steps) for each finished group of trials."""
    psi = np.zeros(1 << c.n, dtype=complex)
    psi[0] = 1.0
    stack = [_Branch(psi, [0] * len(c.bits), 0, list(range(len(rngs))), [], 0)]
    instrs = c.instructions
    n = c.n

    while stack:
        br = stack.pop()
        while True:
            if br.pc >= len(instrs):
                raise SimulationError("control fell off the end of the program")
            if br.pc in c.leaders:
                br.trace.append(c.leaders[br.pc])
            ins = instrs[br.pc]
            if isinstance(ins, (Label, Declare, BranchProbPragma)):
                br.pc += 1
                continue
            br.steps += 1
            if br.steps > max_steps:
                raise SimulationError(f"step limit {max_steps} exceeded: possible infinite loop")

            if isinstance(ins, Gate):
                pos = [c.pos[q] for q in ins.qubits]
                _apply_gate_dense(br.psi, n, ins.name, ins.params, pos)
                br.pc += 1
                perr = noise.gate_error(ins.name, ins.qubits) if noise else 0.0
                if perr > 0.0:
                    groups: dict[tuple, list[int]] = {}
                    for t in br.trials:
                        r = rngs[t]
                        key = tuple(r.randrange(3) for _ in pos) if r.random() < perr else ()
                        groups.setdefault(key, []).append(t)
                    if len(groups) > 1 or () not in groups:
                        forks = _split(br, groups)
                        for key, child in forks:
                            for k, which in zip(pos, key):
                                _apply_pauli(child.psi, n, k, which)
                        stack.extend(child for _, child in forks[1:])
                        br = forks[0][1]
            elif isinstance(ins, Measure):
                k = c.pos[ins.qubit]
                p1 = min(1.0, max(0.0, _prob_one(br.psi, n, k)))
                pflip = noise.readout_flip(ins.qubit) if noise else 0.0
                groups = {}
                for t in br.trials:
                    r = rngs[t]
                    outcome = 1 if r.random() < p1 else 0
                    recorded = outcome ^ 1 if (pflip > 0.0 and r.random() < pflip) else outcome
                    groups.setdefault((outcome, recorded), []).append(t)
                forks = _split(br, groups)
                slot = c.bit_index[ins.bit]
                for (outcome, recorded), child in forks:
                    _collapse(child.psi, n, k, outcome, p1 if outcome else 1.0 - p1)
                    child.mem[slot] = recorded
                    child.pc += 1
                stack.extend(child for _, child in forks[1:])
                br = forks[0][1]
            elif isinstance(ins, Jump):
                br.pc = c.labels[ins.target]
            elif isinstance(ins, CondJump):
                bit = br.mem[c.bit_index[ins.bit]]
                jump = bit == 1 if ins.kind == "WHEN" else bit == 0
                br.pc = c.labels[ins.target] if jump else br.pc + 1
            elif isinstance(ins, Halt):
                yield br.trials, br.mem, br.trace, br.steps
                break
            else:
                raise SimulationError(f"cannot execute {ins!r}")


def _split(br: _Branch, groups: Mapping[tuple, list[int]]) -> list[tuple[tuple, _Branch]]:
    keys = sorted(groups)
    if len(keys) == 1:
        br.trials = groups[keys[0]]
        return [(keys[0], br)]
    out = [(key, br.fork(groups[key], copy_state=True)) for key in keys[1:]]
    br.trials = groups[keys[0]]
    return [(keys[0], br)] + out


def _readout(mem: Sequence[int]) -> str:
    return "".join(map(str, mem))


def run(p: Program, n_qubits: int | None = None, seed: int = 0, max_steps: int = DEFAULT_MAX_STEPS) -> RunResult:
    c = _Compiled(p, n_qubits)
    for _, mem, trace, steps in _execute(c, [random.Random(seed)], None, max_steps):
        return RunResult(_readout(mem), list(trace), steps)
    raise SimulationError("program did not halt")


def _sample(p: Program, n_qubits, trials: int, seed: int, noise, max_steps: int) -> SampleResult:
    if trials < 1:
        raise ValueError("trials must be positive")
    c = _Compiled(p, n_qubits)
    rngs = [random.Random(derive_seed(seed, i)) for i in range(trials)]
    counts: Counter[str] = Counter()
    visits: Counter[str] = Counter()
    for ids, mem, trace, _ in _execute(c, rngs, noise, max_steps):
        counts[_readout(mem)] += len(ids)
        for bid, k in Counter(trace).items():
            visits[bid] += k * len(ids)
    freqs = {bid: visits.get(bid, 0) / trials for bid in c.block_ids}
    return SampleResult(Histogram(dict(counts), trials), freqs, trials)


def run_many(p: Program, n_qubits: int | None = None, trials: int = 200, seed: int = 0,
             max_steps: int = DEFAULT_MAX_STEPS) -> SampleResult:
    return _sample(p, n_qubits, trials, seed, None, max_steps)


def run_noisy(p: Program, n_qubits: int | None, d: DeviceGraph, trials: int = 200, seed: int = 0,
              noise_scale: float = 1.0, max_steps: int = DEFAULT_MAX_STEPS) -> SampleResult:
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    missing = [q for q in p.qubits if q not in d.neighbors]
    if missing:
        raise SimulationError(f"qubits {missing} are not on device {d.name}")
    for ins in p.instructions:
        if isinstance(ins, Gate) and len(ins.qubits) == 2 and not d.is_edge(*ins.qubits):
            raise SimulationError(f"{ins.name} {ins.qubits} is not on a device edge")
    return _sample(p, n_qubits, trials, seed, NoiseModel(d, noise_scale), max_steps)


def exact_distribution(p: Program, max_branches: int = 1 << 16, max_steps: int = DEFAULT_MAX_STEPS,
                       cutoff: float = 1e-14) -> dict[str, float]:
    """Exact readout distribution by enumerating every measurement branch.

    Branches whose probability falls below ``cutoff`` are dropped, so the
    result is only exact for programs whose control flow is finite.
    """
    c = _Compiled(p, None)
    n = c.n
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1.0
    stack = [(psi, [0] * len(c.bits), 0, 1.0, 0)]
    dist: dict[str, float] = {}
    explored = 0
    instrs = c.instructions
    while stack:
        psi, mem, pc, prob, steps = stack.pop()
        explored += 1
        if explored > max_branches:
            raise SimulationError("too many measurement branches for exact enumeration")
        while True:
            ins = instrs[pc]
            if isinstance(ins, (Label, Declare, BranchProbPragma)):
                pc += 1
                continue
            steps += 1
            if steps > max_steps:
                raise SimulationError(f"step limit {max_steps} exceeded: possible infinite loop")
            if isinstance(ins, Gate):
                _apply_gate_dense(psi, n, ins.name, ins.params, [c.pos[q] for q in ins.qubits])
                pc += 1
            elif isinstance(ins, Measure):
                k = c.pos[ins.qubit]
                p1 = min(1.0, max(0.0, _prob_one(psi, n, k)))
                slot = c.bit_index[ins.bit]
                branches = [(o, po) for o, po in ((0, 1.0 - p1), (1, p1)) if prob * po > cutoff]
                for o, po in branches[1:]:
                    child = psi.copy()
                    _collapse(child, n, k, o, po)
                    cmem = list(mem)
                    cmem[slot] = o
                    stack.append((child, cmem, pc + 1, prob * po, steps))
                if not branches:
                    break
                o, po = branches[0]
                _collapse(psi, n, k, o, po)
                mem = list(mem)
                mem[slot] = o
                prob *= po
                pc += 1
            elif isinstance(ins, Jump):
                pc = c.labels[ins.target]
            elif isinstance(ins, CondJump):
                bit = mem[c.bit_index[ins.bit]]
                jump = bit == 1 if ins.kind == "WHEN" else bit == 0
                pc = c.labels[ins.target] if jump else pc + 1
            elif isinstance(ins, Halt):
                key = _readout(mem)
                dist[key] = dist.get(key, 0.0) + prob
                break
    return dist
