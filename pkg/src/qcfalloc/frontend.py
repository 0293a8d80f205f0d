"""Parser and printer for the Quil subset used throughout the package.

Supported lines (one instruction per line, ``#`` starts a comment)::

    DECLARE ro BIT[6]
    RX(pi/2) 0
    RZ(-0.25) 3
    CZ 0 1
    SWAP 2 5
    MEASURE 0 ro[1]
    LABEL @loop
    JUMP @loop
    JUMP-WHEN @done ro[0]
    JUMP-UNLESS @done ro[0]
    PRAGMA BRANCH_PROBABILITY 0.7
    HALT

The probability in ``PRAGMA BRANCH_PROBABILITY`` is the probability that the
conditional jump on the next line is *taken*, for both JUMP-WHEN and
JUMP-UNLESS.
"""

from __future__ import annotations

import ast
import math
import operator
import re
from dataclasses import dataclass, field
from typing import Union

ONE_QUBIT_GATES = frozenset({"RX", "RZ"})
TWO_QUBIT_GATES = frozenset({"CZ", "SWAP"})
GATE_NAMES = ONE_QUBIT_GATES | TWO_QUBIT_GATES

# RX is restricted to k*pi for these k.
RX_MULTIPLES = (-1.0, -0.5, 0.5, 1.0)
_ANGLE_TOL = 1e-9

_LABEL_RE = r"@([A-Za-z_][A-Za-z0-9_\-.]*)"
_IDENT_RE = r"[A-Za-z_][A-Za-z0-9_]*"
_MEMREF_RE = re.compile(rf"^({_IDENT_RE})(?:\[(\d+)\])?$")


class ParseError(ValueError):
    """Raised for malformed or unsupported program text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class MemRef:
    name: str
    index: int = 0

    def __str__(self) -> str:
        return f"{self.name}[{self.index}]"


@dataclass(frozen=True)
class Gate:
    name: str
    params: tuple[float, ...]
    qubits: tuple[int, ...]


@dataclass(frozen=True)
class Measure:
    qubit: int
    bit: MemRef


@dataclass(frozen=True)
class Label:
    name: str


@dataclass(frozen=True)
class Jump:
    target: str


@dataclass(frozen=True)
class CondJump:
    kind: str  # "WHEN" or "UNLESS"
    target: str
    bit: MemRef


@dataclass(frozen=True)
class Halt:
    pass


@dataclass(frozen=True)
class Declare:
    name: str
    size: int = 1


@dataclass(frozen=True)
class BranchProbPragma:
    probability: float


Instruction = Union[Gate, Measure, Label, Jump, CondJump, Halt, Declare, BranchProbPragma]


@dataclass
class Program:
    instructions: tuple[Instruction, ...]
    declared_memory: dict[str, int] = field(default_factory=dict)
    source_name: str = field(default="<string>", compare=False)

    @property
    def qubits(self) -> list[int]:
        """Sorted qubit indices touched by gates or measurements."""
        used: set[int] = set()
        for ins in self.instructions:
            if isinstance(ins, Gate):
                used.update(ins.qubits)
            elif isinstance(ins, Measure):
                used.add(ins.qubit)
        return sorted(used)

    def readout_bits(self) -> list[MemRef]:
        """Every declared classical bit, in declaration order."""
        return [MemRef(name, i) for name, size in self.declared_memory.items() for i in range(size)]


# -- angles -------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def _eval_angle(node: ast.AST) -> float:
    if isinstance(node, ast.Expression):
        return _eval_angle(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval_angle(node.left), _eval_angle(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        return _UNOPS[type(node.op)](_eval_angle(node.operand))
    raise ValueError("unsupported angle expression")


def parse_angle(text: str) -> float:
    """Evaluate an angle such as ``pi/2``, ``-3*pi/4`` or ``0.125``."""
    try:
        value = _eval_angle(ast.parse(text.strip(), mode="eval"))
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError, RecursionError, MemoryError) as exc:
        raise ValueError(f"bad angle {text!r}") from exc
    if not math.isfinite(value):
        raise ValueError(f"bad angle {text!r}")
    return value


def normalize_rz(phi: float) -> float:
    """Map an angle into [-pi, pi], leaving in-range values untouched."""
    if -math.pi <= phi <= math.pi:
        return phi
    return math.remainder(phi, 2 * math.pi)


def canonical_rx(theta: float) -> float:
    """Snap an RX angle to the exact k*pi value it denotes, or raise."""
    for k in RX_MULTIPLES:
        if abs(theta - k * math.pi) <= _ANGLE_TOL:
            return k * math.pi
    raise ValueError(f"RX angle {theta!r} is not one of -pi, -pi/2, pi/2, pi")


def format_angle(value: float) -> str:
    """Inverse of :func:`parse_angle` that prefers symbolic multiples of pi."""
    for den in (1, 2, 3, 4, 6, 8):
        for num in range(-2 * den, 2 * den + 1):
            if num == 0:
                continue
            if value == num * math.pi / den:
                if den == 1:
                    text = "pi" if num == 1 else "-pi" if num == -1 else f"{num}*pi"
                else:
                    sign = "-" if num < 0 else ""
                    mag = abs(num)
                    text = f"{sign}pi/{den}" if mag == 1 else f"{sign}{mag}*pi/{den}"
                if parse_angle(text) == value:
                    return text
    return repr(float(value))


# -- parsing ------------------------------------------------------------------

_GATE_RE = re.compile(r"^([A-Z][A-Z0-9\-]*)(?:\((.*)\))?((?:\s+\S+)*)$")


def _parse_qubit(tok: str, lineno: int) -> int:
    if not re.fullmatch(r"[0-9]+", tok):
        raise ParseError(f"expected a nonnegative qubit index, got {tok!r}", lineno)
    return int(tok)


def _parse_memref(tok: str, lineno: int) -> MemRef:
    m = _MEMREF_RE.match(tok)
    if not m:
        raise ParseError(f"expected a classical address like ro[0], got {tok!r}", lineno)
    return MemRef(m.group(1), int(m.group(2) or 0))


def _parse_label(tok: str, lineno: int) -> str:
    m = re.fullmatch(_LABEL_RE, tok)
    if not m:
        raise ParseError(f"expected a label like @name, got {tok!r}", lineno)
    return m.group(1)


def _parse_line(line: str, lineno: int) -> Instruction:
    head, _, rest = line.partition(" ")
    args = rest.split()

    if head == "HALT":
        if args:
            raise ParseError("HALT takes no operands", lineno)
        return Halt()
    if head == "LABEL":
        if len(args) != 1:
            raise ParseError("LABEL takes one label", lineno)
        return Label(_parse_label(args[0], lineno))
    if head == "JUMP":
        if len(args) != 1:
            raise ParseError("JUMP takes one label", lineno)
        return Jump(_parse_label(args[0], lineno))
    if head in ("JUMP-WHEN", "JUMP-UNLESS"):
        if len(args) != 2:
            raise ParseError(f"{head} takes a label and a classical address", lineno)
        return CondJump(head.split("-")[1], _parse_label(args[0], lineno), _parse_memref(args[1], lineno))
    if head == "MEASURE":
        if len(args) != 2:
            raise ParseError("MEASURE takes a qubit and a classical address", lineno)
        return Measure(_parse_qubit(args[0], lineno), _parse_memref(args[1], lineno))
    if head == "DECLARE":
        m = re.fullmatch(rf"({_IDENT_RE})\s+BIT(?:\[(\d+)\])?", rest.strip())
        if not m:
            raise ParseError("only 'DECLARE name BIT[n]' is supported", lineno)
        size = int(m.group(2) or 1)
        if size < 1:
            raise ParseError("memory size must be positive", lineno)
        return Declare(m.group(1), size)
    if head == "PRAGMA":
        if len(args) != 2 or args[0] != "BRANCH_PROBABILITY":
            raise ParseError("unsupported pragma; only BRANCH_PROBABILITY is recognized", lineno)
        try:
            p = float(args[1])
        except ValueError:
            raise ParseError(f"bad probability {args[1]!r}", lineno) from None
        if not 0.0 <= p <= 1.0:
            raise ParseError(f"branch probability {p} outside [0, 1]", lineno)
        return BranchProbPragma(p)

    m = _GATE_RE.match(line)
    name = m.group(1) if m else head.split("(")[0]
    if name not in GATE_NAMES:
        raise ParseError(f"unsupported instruction {name!r}", lineno)
    if m is None:
        raise ParseError(f"malformed {name} instruction", lineno)
    params_text, operands = m.group(2), m.group(3).split()
    params: tuple[float, ...] = ()
    if params_text is not None:
        try:
            params = tuple(parse_angle(t) for t in params_text.split(","))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    qubits = tuple(_parse_qubit(t, lineno) for t in operands)

    if name in ONE_QUBIT_GATES:
        if len(params) != 1 or len(qubits) != 1:
            raise ParseError(f"{name} takes one angle and one qubit", lineno)
        if name == "RX":
            try:
                params = (canonical_rx(params[0]),)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        else:
            params = (normalize_rz(params[0]),)
    else:
        if params or len(qubits) != 2:
            raise ParseError(f"{name} takes exactly two qubits and no parameters", lineno)
        if qubits[0] == qubits[1]:
            raise ParseError(f"{name} needs two distinct qubits", lineno)
    return Gate(name, params, qubits)


def validate_program(program: Program) -> None:
    """Check label, memory and pragma invariants; raise ParseError."""
    labels: dict[str, int] = {}
    for i, ins in enumerate(program.instructions):
        if isinstance(ins, Label):
            if ins.name in labels:
                raise ParseError(f"duplicate label {ins.name!r}")
            labels[ins.name] = i
    mem = program.declared_memory
    instrs = program.instructions
    for i, ins in enumerate(instrs):
        if isinstance(ins, (Jump, CondJump)) and ins.target not in labels:
            raise ParseError(f"undefined label {ins.target!r}")
        bit = getattr(ins, "bit", None)
        if bit is not None and (bit.name not in mem or bit.index >= mem[bit.name]):
            raise ParseError(f"classical address {bit} is not declared")
        if isinstance(ins, BranchProbPragma) and (i + 1 >= len(instrs) or not isinstance(instrs[i + 1], CondJump)):
            raise ParseError("BRANCH_PROBABILITY pragma must immediately precede JUMP-WHEN or JUMP-UNLESS")
        if isinstance(ins, Gate):
            if any(q < 0 for q in ins.qubits):
                raise ParseError("negative qubit index")


def make_program(instructions, source_name: str = "<string>") -> Program:
    """Build and validate a Program from instruction objects."""
    instructions = tuple(instructions)
    memory: dict[str, int] = {}
    for ins in instructions:
        if isinstance(ins, Declare):
            if ins.name in memory:
                raise ParseError(f"memory region {ins.name!r} declared twice")
            memory[ins.name] = ins.size
    prog = Program(instructions, memory, source_name)
    validate_program(prog)
    return prog


def parse_program(text: str, source_name: str = "<string>") -> Program:
    instructions: list[Instruction] = []
    labels: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        ins = _parse_line(" ".join(line.split()), lineno)
        if isinstance(ins, Label):
            if ins.name in labels:
                raise ParseError(f"duplicate label {ins.name!r} (first defined on line {labels[ins.name]})", lineno)
            labels[ins.name] = lineno
        instructions.append(ins)
    return make_program(instructions, source_name)


def format_instruction(ins: Instruction) -> str:
    if isinstance(ins, Gate):
        params = f"({', '.join(format_angle(p) for p in ins.params)})" if ins.params else ""
        return f"{ins.name}{params} {' '.join(map(str, ins.qubits))}"
    if isinstance(ins, Measure):
        return f"MEASURE {ins.qubit} {ins.bit}"
    if isinstance(ins, Label):
        return f"LABEL @{ins.name}"
    if isinstance(ins, Jump):
        return f"JUMP @{ins.target}"
    if isinstance(ins, CondJump):
        return f"JUMP-{ins.kind} @{ins.target} {ins.bit}"
    if isinstance(ins, Halt):
        return "HALT"
    if isinstance(ins, Declare):
        return f"DECLARE {ins.name} BIT[{ins.size}]"
    if isinstance(ins, BranchProbPragma):
        return f"PRAGMA BRANCH_PROBABILITY {ins.probability!r}"
    raise TypeError(f"not an instruction: {ins!r}")


def emit_program(p: Program) -> str:
    return "".join(format_instruction(ins) + "\n" for ins in p.instructions)
