"""Basic blocks and the control flow graph."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Mapping, Union

from .frontend import (
    BranchProbPragma,
    CondJump,
    Declare,
    Gate,
    Halt,
    Instruction,
    Jump,
    Label,
    Measure,
    MemRef,
    Program,
    make_program,
)

DEFAULT_BRANCH_PROBABILITY = 0.5


class CFGError(ValueError):
    pass


@dataclass(frozen=True)
class Goto:
    """Unconditional transfer; ``explicit`` is False for plain fallthrough."""

    target: str
    explicit: bool = True


@dataclass(frozen=True)
class Branch:
    """Conditional jump to ``taken`` with probability ``probability``, else ``fallthrough``."""

    kind: str
    bit: MemRef
    taken: str
    fallthrough: str
    probability: float
    pragma: bool = False


@dataclass(frozen=True)
class Stop:
    pass


Terminator = Union[Goto, Branch, Stop]


@dataclass(frozen=True)
class BasicBlock:
    id: str
    instructions: tuple[Instruction, ...]
    terminator: Terminator
    label: str | None = None
    start: int | None = None  # index of the leader in the source program

    def retarget(self, old: str, new: str) -> "BasicBlock":
        t = self.terminator
        if isinstance(t, Goto) and t.target == old:
            t = Goto(new, explicit=True)
        elif isinstance(t, Branch) and old in (t.taken, t.fallthrough):
            t = replace(
                t,
                taken=new if t.taken == old else t.taken,
                fallthrough=new if t.fallthrough == old else t.fallthrough,
            )
        return replace(self, terminator=t)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    probability: float
    kind: str  # "taken", "fallthrough" or "unconditional"


def terminator_edges(block: BasicBlock) -> list[Edge]:
    t = block.terminator
    if isinstance(t, Goto):
        return [Edge(block.id, t.target, 1.0, "unconditional" if t.explicit else "fallthrough")]
    if isinstance(t, Branch):
        if t.taken == t.fallthrough:
            return [Edge(block.id, t.taken, 1.0, "unconditional")]
        return [
            Edge(block.id, t.taken, t.probability, "taken"),
            Edge(block.id, t.fallthrough, 1.0 - t.probability, "fallthrough"),
        ]
    return []


@dataclass(frozen=True)
class ControlFlowGraph:
    """Blocks in program order, plus the edges dropped by infinite-loop pruning."""

    blocks: Mapping[str, BasicBlock]
    entry: str
    declarations: tuple[Declare, ...] = ()
    pruned_edges: frozenset[tuple[str, str]] = frozenset()

    @cached_property
    def edges(self) -> tuple[Edge, ...]:
        return tuple(
            e for b in self.blocks.values() for e in terminator_edges(b)
            if (e.src, e.dst) not in self.pruned_edges
        )

    @cached_property
    def _succ(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {b: [] for b in self.blocks}
        for e in self.edges:
            if e.dst not in out[e.src]:
                out[e.src].append(e.dst)
        return out

    @cached_property
    def _pred(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {b: [] for b in self.blocks}
        for e in self.edges:
            if e.src not in out[e.dst]:
                out[e.dst].append(e.src)
        return out

    def succ(self, b: str) -> list[str]:
        return self._succ[b]

    def pred(self, b: str) -> list[str]:
        return self._pred[b]

    @property
    def order(self) -> list[str]:
        return list(self.blocks)

    @property
    def exit_blocks(self) -> frozenset[str]:
        return frozenset(b for b, blk in self.blocks.items() if isinstance(blk.terminator, Stop))

    def structural(self) -> "ControlFlowGraph":
        """The same graph with any pruned edges restored."""
        if not self.pruned_edges:
            return self
        return replace(self, pruned_edges=frozenset())


def _fresh_id(base: str, taken: set[str]) -> str:
    name = base
    while name in taken:
        name += "_"
    return name


def build_cfg(p: Program, default_probability: float = DEFAULT_BRANCH_PROBABILITY) -> ControlFlowGraph:
    if not 0.0 <= default_probability <= 1.0:
        raise ValueError("default branch probability must lie in [0, 1]")
    instrs = p.instructions
    labels = {ins.name for ins in instrs if isinstance(ins, Label)}
    code = [i for i, ins in enumerate(instrs) if not isinstance(ins, Declare)]
    if not code:
        raise CFGError("program has no instructions")

    leaders = {code[0]}
    for pos, i in enumerate(code):
        ins = instrs[i]
        if isinstance(ins, Label):
            leaders.add(i)
        if isinstance(ins, (Jump, CondJump, Halt)) and pos + 1 < len(code):
            leaders.add(code[pos + 1])

    # Group code indices into raw blocks.
    groups: list[list[int]] = []
    for i in code:
        if i in leaders:
            groups.append([])
        groups[-1].append(i)

    taken_ids = set(labels)
    ids: list[str] = []
    for n, g in enumerate(groups):
        first = instrs[g[0]]
        if isinstance(first, Label):
            ids.append(first.name)
        else:
            bid = _fresh_id(f"_b{n}", taken_ids)
            taken_ids.add(bid)
            ids.append(bid)

    blocks: dict[str, BasicBlock] = {}
    for n, g in enumerate(groups):
        first = instrs[g[0]]
        label = first.name if isinstance(first, Label) else None
        body = [instrs[i] for i in g if isinstance(instrs[i], (Gate, Measure))]
        last = instrs[g[-1]]
        nxt = ids[n + 1] if n + 1 < len(groups) else None

        if isinstance(last, Halt):
            term: Terminator = Stop()
        elif isinstance(last, Jump):
            term = Goto(last.target)
        elif isinstance(last, CondJump):
            if nxt is None:
                raise CFGError("conditional jump falls through off the end of the program")
            prev = instrs[g[-2]] if len(g) > 1 else None
            if isinstance(prev, BranchProbPragma):
                prob, pragma = prev.probability, True
            else:
                prob, pragma = default_probability, False
            term = Branch(last.kind, last.bit, last.target, nxt, prob, pragma)
        else:
            if nxt is None:
                raise CFGError("control falls off the end of the program without HALT")
            term = Goto(nxt, explicit=False)
        blocks[ids[n]] = BasicBlock(ids[n], tuple(body), term, label, g[0])

    decls = tuple(ins for ins in instrs if isinstance(ins, Declare))
    return ControlFlowGraph(blocks, ids[0], decls)


def cfg_to_program(cfg: ControlFlowGraph, source_name: str = "<cfg>") -> Program:
    """Lay the blocks out in order, adding labels and jumps where needed."""
    order = cfg.order
    jump_targets: set[str] = set()
    layout: list[tuple[BasicBlock, list[Instruction]]] = []
    for n, bid in enumerate(order):
        blk = cfg.blocks[bid]
        nxt = order[n + 1] if n + 1 < len(order) else None
        tail: list[Instruction] = []
        t = blk.terminator
        if isinstance(t, Stop):
            tail.append(Halt())
        elif isinstance(t, Goto):
            if t.explicit or t.target != nxt:
                tail.append(Jump(t.target))
                jump_targets.add(t.target)
        else:
            if t.pragma:
                tail.append(BranchProbPragma(t.probability))
            tail.append(CondJump(t.kind, t.taken, t.bit))
            jump_targets.add(t.taken)
            if t.fallthrough != nxt:
                tail.append(Jump(t.fallthrough))
                jump_targets.add(t.fallthrough)
        layout.append((blk, tail))

    out: list[Instruction] = list(cfg.declarations)
    for blk, tail in layout:
        name = blk.label if blk.label is not None else (blk.id if blk.id in jump_targets else None)
        if name is not None:
            out.append(Label(name))
        out.extend(blk.instructions)
        out.extend(tail)
    return make_program(out, source_name)


def reachable_from_entry(cfg: ControlFlowGraph) -> set[str]:
    seen = {cfg.entry}
    todo = deque([cfg.entry])
    while todo:
        b = todo.popleft()
        for s in cfg.succ(b):
            if s not in seen:
                seen.add(s)
                todo.append(s)
    return seen


def can_reach_exit(cfg: ControlFlowGraph) -> set[str]:
    seen = set(cfg.exit_blocks)
    todo = deque(seen)
    while todo:
        b = todo.popleft()
        for p in cfg.pred(b):
            if p not in seen:
                seen.add(p)
                todo.append(p)
    return seen


def eliminate_dead_code(cfg: ControlFlowGraph) -> ControlFlowGraph:
    live = reachable_from_entry(cfg.structural())
    if len(live) == len(cfg.blocks):
        return cfg
    blocks = {b: blk for b, blk in cfg.blocks.items() if b in live}
    pruned = frozenset(e for e in cfg.pruned_edges if e[0] in live)
    return ControlFlowGraph(blocks, cfg.entry, cfg.declarations, pruned)


def with_blocks(cfg: ControlFlowGraph, blocks: Iterable[BasicBlock]) -> ControlFlowGraph:
    """Copy of ``cfg`` whose blocks are replaced by ``blocks`` (kept in the given order)."""
    return ControlFlowGraph({b.id: b for b in blocks}, cfg.entry, cfg.declarations, cfg.pruned_edges)


def to_dot(cfg: ControlFlowGraph, weights: Mapping[str, float] | None = None) -> str:
    lines = ["digraph cfg {", "  node [shape=box];"]
    for bid, blk in cfg.blocks.items():
        text = f"{bid}\\n{len(blk.instructions)} instr"
        if weights is not None and bid in weights:
            text += f"\\nF={weights[bid]:.4g}"
        shape = ", peripheries=2" if bid in cfg.exit_blocks else ""
        lines.append(f'  "{bid}" [label="{text}"{shape}];')
    lines.append('  "START" [shape=plaintext];')
    lines.append(f'  "START" -> "{cfg.entry}";')
    for e in cfg.structural().edges:
        style = ", style=dashed" if (e.src, e.dst) in cfg.pruned_edges else ""
        lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.probability:.3g}"{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
