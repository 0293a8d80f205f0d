"""Qubit allocation with control flow.

A candidate allocation is an injective map from logical to physical qubits at
the program entry. Routing then walks the blocks in reverse postorder, giving
each block the mapping that leaves its immediate dominator, and inserting
SWAPs lazily right before the two-qubit gate that needs them. SWAPs made in a
block ``b`` stay in effect exactly in the blocks ``b`` strictly dominates; on
every edge that leaves that region a trampoline block undoes them. The entry
map is chosen by simulated annealing on the expected error
``sum_b F_b * sum_{g in b} -ln f(g)``.

In CF-unaware mode every block weighs 1 and each SWAP is undone right after
the gate it enabled, so blocks never change the mapping and no trampolines
are needed.
"""

from __future__ import annotations

import math
import random
from itertools import permutations
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .cfg import (
    BasicBlock,
    ControlFlowGraph,
    Goto,
    build_cfg,
    cfg_to_program,
    eliminate_dead_code,
    reachable_from_entry,
    with_blocks,
)
from .device import DeviceGraph
from .dominators import (
    DominatorTree,
    compute_dominators,
    dominates,
    reverse_postorder,
    strictly_dominates,
)
from .frontend import Gate, Instruction, Measure, Program
from .rng import derive_seed
from .weights import BlockWeights, edge_flows, expected_executions, prune_infinite_loops

_COST_DIGITS = 12


class AllocationError(ValueError):
    pass


class Allocation:
    """Injective logical -> physical qubit map; ``swap`` acts on physical qubits."""

    __slots__ = ("l2p", "p2l")

    def __init__(self, mapping: Mapping[int, int] | Iterable[tuple[int, int]] = ()):
        self.l2p: dict[int, int] = dict(mapping)
        self.p2l: dict[int, int] = {}
        for lq, pq in self.l2p.items():
            if pq in self.p2l:
                raise AllocationError(f"physical qubit {pq} assigned twice")
            self.p2l[pq] = lq

    def __getitem__(self, logical: int) -> int:
        return self.l2p[logical]

    def __contains__(self, logical: int) -> bool:
        return logical in self.l2p

    def __len__(self) -> int:
        return len(self.l2p)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Allocation) and self.l2p == other.l2p

    def __repr__(self) -> str:
        return f"Allocation({dict(sorted(self.l2p.items()))})"

    def copy(self) -> "Allocation":
        new = Allocation.__new__(Allocation)
        new.l2p = dict(self.l2p)
        new.p2l = dict(self.p2l)
        return new

    def bind(self, logical: int, physical: int) -> None:
        if logical in self.l2p or physical in self.p2l:
            raise AllocationError(f"cannot bind {logical} -> {physical}")
        self.l2p[logical] = physical
        self.p2l[physical] = logical

    def swap(self, a: int, b: int) -> None:
        la, lb = self.p2l.pop(a, None), self.p2l.pop(b, None)
        if la is not None:
            self.l2p[la] = b
            self.p2l[b] = la
        if lb is not None:
            self.l2p[lb] = a
            self.p2l[a] = lb


@dataclass(frozen=True)
class SwapOp:
    block: str
    position: int  # index in the routed block's instruction list
    pair: tuple[int, int]


@dataclass(frozen=True)
class RoutedBlock:
    block: BasicBlock
    swaps: tuple[SwapOp, ...]
    lasting: tuple[tuple[int, int], ...]  # swaps still in effect at block exit, in order
    points: tuple[Allocation, ...] | None = None  # mapping before each source instruction


@dataclass
class AllocatedProgram:
    program: Program
    cfg: ControlFlowGraph
    entry_mapping: Allocation
    cost: float
    trampolines: frozenset[str]
    weights: dict[str, float]
    swap_ops: tuple[SwapOp, ...] = ()

    @property
    def swap_count(self) -> int:
        return sum(
            1 for blk in self.cfg.blocks.values() for ins in blk.instructions
            if isinstance(ins, Gate) and ins.name == "SWAP"
        )


@dataclass(frozen=True)
class AnnealConfig:
    iterations: int = 20000
    t0: float = 10.0
    alpha: float = 0.995
    restarts: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.restarts < 1:
            raise ValueError("iterations and restarts must be positive")
        if self.t0 <= 0 or not 0 < self.alpha <= 1:
            raise ValueError("need t0 > 0 and 0 < alpha <= 1")


# -- cost ---------------------------------------------------------------------

def instruction_cost(ins: Instruction, d: DeviceGraph) -> float:
    """``-ln`` of the fidelity of one physical instruction."""
    if isinstance(ins, Gate):
        if len(ins.qubits) == 1:
            return -math.log(d.gate_fidelity(ins.qubits[0]))
        a, b = ins.qubits
        if not d.is_edge(a, b):
            raise AllocationError(f"{ins.name} on ({a}, {b}) which is not a device edge")
        c = d.edge_cost(a, b)
        return 3.0 * c if ins.name == "SWAP" else c
    if isinstance(ins, Measure):
        return -math.log(d.measure_fidelity(ins.qubit))
    return 0.0


def block_cost(block: BasicBlock, d: DeviceGraph) -> float:
    return sum(instruction_cost(ins, d) for ins in block.instructions)


def allocation_cost(cfg: ControlFlowGraph, weights: Mapping[str, float], d: DeviceGraph) -> float:
    return sum(weights.get(b, 0.0) * block_cost(blk, d) for b, blk in cfg.blocks.items())


# -- routing ------------------------------------------------------------------

def _bind_free(alloc: Allocation, logical: int, d: DeviceGraph, partner: int | None) -> None:
    free = [q for q in d.qubits if q not in alloc.p2l]
    if not free:
        raise AllocationError("device too small: no free physical qubit")
    if partner is not None and partner in alloc:
        target = alloc[partner]
        best = min(free, key=lambda q: (round(d.shortest_path(q, target)[1], _COST_DIGITS), q))
    else:
        best = min(free, key=lambda q: (-d.gate_fidelity(q), q))
    alloc.bind(logical, best)


def _split_point(path: Sequence[int], gate: str, d: DeviceGraph) -> int:
    """Index k so the gate lands on edge (path[k], path[k+1]); the first operand
    walks to path[k] and the second to path[k+1]."""
    costs = [d.edge_cost(path[i], path[i + 1]) for i in range(len(path) - 1)]
    total = 3.0 * sum(costs)
    gate_factor = 3.0 if gate == "SWAP" else 1.0
    best_k, best_c = 0, None
    for k, c in enumerate(costs):
        value = round(total - 3.0 * c + gate_factor * c, _COST_DIGITS)
        if best_c is None or value <= best_c:
            best_k, best_c = k, value
    return best_k


def lazy_route_block(
    b: BasicBlock,
    incoming: Allocation,
    d: DeviceGraph,
    *,
    eager: bool = False,
    record_points: bool = False,
) -> tuple[RoutedBlock, Allocation]:
    m = incoming.copy()
    out: list[Instruction] = []
    swaps: list[SwapOp] = []
    lasting: list[tuple[int, int]] = []
    points: list[Allocation] | None = [] if record_points else None

    def emit_swap(p: int, q: int) -> None:
        swaps.append(SwapOp(b.id, len(out), (p, q)))
        out.append(Gate("SWAP", (), (p, q)))
        m.swap(p, q)

    for ins in b.instructions:
        if isinstance(ins, Gate) and len(ins.qubits) == 2:
            la, lb = ins.qubits
            if la not in m:
                _bind_free(m, la, d, lb)
            if lb not in m:
                _bind_free(m, lb, d, la)
        else:
            q = ins.qubits[0] if isinstance(ins, Gate) else ins.qubit
            if q not in m:
                _bind_free(m, q, d, None)
        if points is not None:
            points.append(m.copy())

        if isinstance(ins, Measure):
            out.append(Measure(m[ins.qubit], ins.bit))
        elif len(ins.qubits) == 1:
            out.append(Gate(ins.name, ins.params, (m[ins.qubits[0]],)))
        else:
            la, lb = ins.qubits
            pa, pb = m[la], m[lb]
            inserted: list[tuple[int, int]] = []
            if not d.is_edge(pa, pb):
                path, _ = d.shortest_path(pa, pb)
                k = _split_point(path, ins.name, d)
                for i in range(k):
                    inserted.append((path[i], path[i + 1]))
                for j in range(len(path) - 1, k + 1, -1):
                    inserted.append((path[j], path[j - 1]))
                for p, q in inserted:
                    emit_swap(p, q)
            out.append(Gate(ins.name, ins.params, (m[la], m[lb])))
            if eager:
                for p, q in reversed(inserted):
                    emit_swap(p, q)
            else:
                lasting.extend(inserted)

    routed = BasicBlock(b.id, tuple(out), b.terminator, b.label, b.start)
    return RoutedBlock(routed, tuple(swaps), tuple(lasting), tuple(points) if points is not None else None), m


def inverse_swap_edges(cfg: ControlFlowGraph, t: DominatorTree, b: str) -> set[tuple[str, str]]:
    """Edges (b1, b2) with ``b`` dominating b1 but not strictly dominating b2."""
    return {
        (e.src, e.dst) for e in cfg.structural().edges
        if dominates(t, b, e.src) and not strictly_dominates(t, b, e.dst)
    }


def _fresh_label(base: str, taken: set[str]) -> str:
    name = base
    n = 1
    while name in taken:
        n += 1
        name = f"{base}_{n}"
    return name


def insert_trampolines(
    cfg: ControlFlowGraph, plan: Mapping[tuple[str, str], Sequence[tuple[int, int]]]
) -> ControlFlowGraph:
    """Put a block on each planned edge that undoes its swaps (given in
    application order) and then jumps to the original target."""
    rank = {b: i for i, b in enumerate(cfg.blocks)}
    blocks = dict(cfg.blocks)
    extra: list[BasicBlock] = []
    taken = set(blocks) | {blk.label for blk in blocks.values() if blk.label}
    for (b1, b2) in sorted(plan, key=lambda e: (rank[e[0]], rank[e[1]])):
        swaps = plan[(b1, b2)]
        if not swaps:
            continue
        name = _fresh_label(f"_undo_{b1}_{b2}", taken)
        taken.add(name)
        body = tuple(Gate("SWAP", (), tuple(pair)) for pair in reversed(swaps))
        extra.append(BasicBlock(name, body, Goto(b2), label=name))
        blocks[b1] = blocks[b1].retarget(b2, name)
    if not extra:
        return cfg
    return with_blocks(cfg, list(blocks.values()) + extra)


def rewrite_measures(cfg: ControlFlowGraph, points: Mapping[tuple[str, int], Allocation]) -> ControlFlowGraph:
    """Replace each MEASURE operand by the physical qubit holding it at that point.

    ``points[(block, i)]`` is the allocation in effect before instruction ``i``
    of ``block``.
    """
    new_blocks = []
    for bid, blk in cfg.blocks.items():
        body = list(blk.instructions)
        for i, ins in enumerate(body):
            if isinstance(ins, Measure):
                try:
                    body[i] = Measure(points[(bid, i)][ins.qubit], ins.bit)
                except KeyError:
                    raise AllocationError(f"qubit {ins.qubit} unmapped at {bid}[{i}]") from None
        new_blocks.append(BasicBlock(bid, tuple(body), blk.terminator, blk.label, blk.start))
    return with_blocks(cfg, new_blocks)


class Router:
    """Routes a fixed CFG for any entry mapping; caches per-mapping costs."""

    def __init__(self, cfg: ControlFlowGraph, weights: Mapping[str, float], d: DeviceGraph, *, eager: bool = False):
        self.cfg = cfg
        self.structural = cfg.structural()
        if reachable_from_entry(self.structural) != set(cfg.blocks):
            raise AllocationError("allocation needs a dead-code-free CFG")
        self.device = d
        self.eager = eager
        self.weights = {b: float(weights.get(b, 0.0)) for b in cfg.blocks}
        self.flows = edge_flows(cfg, self.weights)
        self.tree = compute_dominators(self.structural)
        self.rpo = reverse_postorder(self.structural)
        self.logicals = _program_qubits(cfg)
        if len(self.logicals) > d.n_qubits:
            raise AllocationError(
                f"device too small: {len(self.logicals)} logical qubits, {d.n_qubits} physical"
            )
        self._memo: dict[tuple[int, ...], float] = {}

    def route(self, entry: Allocation, record_points: bool = False):
        routed: dict[str, RoutedBlock] = {}
        outgoing: dict[str, Allocation] = {}
        for b in self.rpo:
            inc = entry if b == self.cfg.entry else outgoing[self.tree.idom[b]]
            routed[b], outgoing[b] = lazy_route_block(
                self.cfg.blocks[b], inc, self.device, eager=self.eager, record_points=record_points
            )
        plan: dict[tuple[str, str], list[tuple[int, int]]] = {}
        if not self.eager:
            owners: dict[tuple[str, str], list[str]] = {}
            for b in self.rpo:
                if routed[b].lasting:
                    for edge in inverse_swap_edges(self.structural, self.tree, b):
                        owners.setdefault(edge, []).append(b)
            for edge, bs in owners.items():
                bs.sort(key=self.tree.depth)
                plan[edge] = [pair for b in bs for pair in routed[b].lasting]
        return routed, plan

    def cost_of(self, routed: Mapping[str, RoutedBlock], plan) -> float:
        total = sum(self.weights[b] * block_cost(r.block, self.device) for b, r in routed.items())
        for edge, swaps in plan.items():
            flow = self.flows.get(edge, 0.0)
            total += flow * sum(3.0 * self.device.edge_cost(p, q) for p, q in swaps)
        return total

    def energy(self, phys: tuple[int, ...]) -> float:
        cost = self._memo.get(phys)
        if cost is None:
            routed, plan = self.route(Allocation(zip(self.logicals, phys)))
            cost = self.cost_of(routed, plan)
            self._memo[phys] = cost
        return cost

    def materialize(self, phys: Sequence[int]) -> AllocatedProgram:
        entry = Allocation(zip(self.logicals, phys))
        routed, plan = self.route(entry)
        base = with_blocks(self.cfg, [routed[b].block for b in self.cfg.blocks])
        out = insert_trampolines(base, plan)
        trampolines = frozenset(set(out.blocks) - set(self.cfg.blocks))
        weights = dict(self.weights)
        swap_ops = [s for b in self.cfg.blocks for s in routed[b].swaps]
        for tb in trampolines:
            blk = out.blocks[tb]
            src = next(b for b, other in out.blocks.items() if tb in _targets(other))
            weights[tb] = self.flows.get((src, blk.terminator.target), 0.0)
            swap_ops.extend(SwapOp(tb, i, ins.qubits) for i, ins in enumerate(blk.instructions))
        cost = allocation_cost(out, weights, self.device)
        program = cfg_to_program(out, source_name="<allocated>")
        return AllocatedProgram(program, out, entry, cost, trampolines, weights, tuple(swap_ops))


def _targets(blk: BasicBlock) -> set[str]:
    t = blk.terminator
    if isinstance(t, Goto):
        return {t.target}
    if hasattr(t, "taken"):
        return {t.taken, t.fallthrough}
    return set()


def _program_qubits(cfg: ControlFlowGraph) -> list[int]:
    used: set[int] = set()
    for blk in cfg.blocks.values():
        for ins in blk.instructions:
            used.update(ins.qubits if isinstance(ins, Gate) else (ins.qubit,))
    return sorted(used)


# -- search -------------------------------------------------------------------

def anneal(router: Router, config: AnnealConfig) -> tuple[tuple[int, ...], float]:
    """Best entry placement found over all restarts, as (physical tuple, cost)."""
    n = len(router.logicals)
    phys = list(router.device.qubits)
    if n == 0:
        return (), router.energy(())
    results = []
    for r in range(config.restarts):
        rng = random.Random(derive_seed(config.seed, r))
        state = rng.sample(phys, n)
        cur = router.energy(tuple(state))
        best = (round(cur, _COST_DIGITS), tuple(state))
        temp = config.t0
        for _ in range(config.iterations):
            i = rng.randrange(n)
            p = rng.choice(phys)
            if p != state[i]:
                cand = list(state)
                if p in cand:
                    cand[cand.index(p)] = state[i]
                cand[i] = p
                e = router.energy(tuple(cand))
                delta = e - cur
                if delta <= 0 or (temp > 0 and rng.random() < math.exp(-delta / temp)):
                    state, cur = cand, e
                    key = (round(cur, _COST_DIGITS), tuple(state))
                    if key < best:
                        best = key
            temp *= config.alpha
        results.append((best[0], r, best[1]))
    cost, _, placement = min(results)
    return placement, router.energy(placement)


def exhaustive_search(router: Router) -> tuple[tuple[int, ...], float]:
    """Brute force over every injective placement; only for tiny instances."""
    best = None
    for placement in permutations(router.device.qubits, len(router.logicals)):
        key = (round(router.energy(placement), _COST_DIGITS), placement)
        if best is None or key < best:
            best = key
    return best[1], router.energy(best[1])


def allocate(
    cfg: ControlFlowGraph,
    w: BlockWeights | Mapping[str, float],
    d: DeviceGraph,
    config: AnnealConfig = AnnealConfig(),
) -> AllocatedProgram:
    weights = w.weights if isinstance(w, BlockWeights) else w
    router = Router(cfg, weights, d)
    placement, _ = anneal(router, config)
    return router.materialize(placement)


def allocate_cf_unaware(cfg: ControlFlowGraph, d: DeviceGraph, config: AnnealConfig = AnnealConfig()) -> AllocatedProgram:
    router = Router(cfg, {b: 1.0 for b in cfg.blocks}, d, eager=True)
    placement, _ = anneal(router, config)
    return router.materialize(placement)


def prepare(program: Program, default_probability: float = 0.5) -> tuple[ControlFlowGraph, BlockWeights]:
    """Parse-level program -> dead-code-free, pruned CFG and its block weights."""
    cfg = eliminate_dead_code(build_cfg(program, default_probability))
    cfg = prune_infinite_loops(cfg)
    return cfg, expected_executions(cfg)


def compile_program(
    program: Program,
    d: DeviceGraph,
    config: AnnealConfig = AnnealConfig(),
    *,
    cf_unaware: bool = False,
    default_probability: float = 0.5,
) -> AllocatedProgram:
    cfg, weights = prepare(program, default_probability)
    if cf_unaware:
        return allocate_cf_unaware(cfg, d, config)
    return allocate(cfg, weights, d, config)


# -- verification helpers -----------------------------------------------------

def _apply(state: tuple[int, ...], index: Mapping[int, int], pairs: Iterable[tuple[int, int]]) -> tuple[int, ...]:
    s = list(state)
    for p, q in pairs:
        i, j = index[p], index[q]
        s[i], s[j] = s[j], s[i]
    return tuple(s)


def entry_permutations(alloc: AllocatedProgram, d: DeviceGraph) -> dict[str, set[tuple[int, ...]]]:
    """Every physical-qubit permutation that can be in effect at each block
    entry, over all execution paths (including around loops)."""
    cfg = alloc.cfg.structural()
    index = {q: i for i, q in enumerate(d.qubits)}
    per_block: dict[str, list[tuple[int, int]]] = {b: [] for b in cfg.blocks}
    for s in alloc.swap_ops:
        per_block[s.block].append(s.pair)
    seen: dict[str, set[tuple[int, ...]]] = {b: set() for b in cfg.blocks}
    start = tuple(range(len(d.qubits)))
    seen[cfg.entry].add(start)
    work = [(cfg.entry, start)]
    while work:
        b, state = work.pop()
        out = _apply(state, index, per_block[b])
        for s in cfg.succ(b):
            if out not in seen[s]:
                seen[s].add(out)
                work.append((s, out))
    return seen


def routing_invariant_violations(alloc: AllocatedProgram, d: DeviceGraph) -> list[str]:
    return [b for b, perms in entry_permutations(alloc, d).items() if len(perms) > 1]
