"""Expected block execution counts.

Each block b satisfies ``F_b = sum_p F_p * P(p, b)`` over its predecessors,
and the entry block gets an extra ``+1`` for the initial execution. Back edges
into parts of the graph that can never reach a HALT are dropped first so the
system stays solvable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cfg import ControlFlowGraph, reachable_from_entry

RESIDUAL_TOL = 1e-9


class WeightSolveError(RuntimeError):
    def __init__(self, message: str, component: Sequence[str] = ()):
        self.component = tuple(component)
        super().__init__(message)


@dataclass(frozen=True)
class BlockWeights:
    weights: dict[str, float]
    pruned_edges: frozenset[tuple[str, str]] = field(default_factory=frozenset)

    def __getitem__(self, block: str) -> float:
        return self.weights[block]


def _positive_exit_reachers(cfg: ControlFlowGraph) -> set[str]:
    # Zero-probability edges never carry control, so they do not count as a way out.
    pred: dict[str, list[str]] = {b: [] for b in cfg.blocks}
    for e in cfg.structural().edges:
        if e.probability > 0.0:
            pred[e.dst].append(e.src)
    seen = set(cfg.exit_blocks)
    stack = list(seen)
    while stack:
        b = stack.pop()
        for p in pred[b]:
            if p not in seen:
                seen.add(p)
                stack.append(p)
    return seen


def back_edges(cfg: ControlFlowGraph) -> set[tuple[str, str]]:
    """Edges whose target is on the DFS stack when traversed.

    The DFS starts at the entry and then restarts from any unvisited block in
    program order, so dead components are covered too. Successors are visited
    in program order.
    """
    rank = {b: i for i, b in enumerate(cfg.blocks)}
    succ = {b: sorted(set(cfg.structural().succ(b)), key=rank.__getitem__) for b in cfg.blocks}
    state: dict[str, int] = {}  # 1 = on stack, 2 = finished
    found: set[tuple[str, str]] = set()

    for root in [cfg.entry] + list(cfg.blocks):
        if root in state:
            continue
        state[root] = 1
        stack = [(root, iter(succ[root]))]
        while stack:
            node, it = stack[-1]
            for s in it:
                if s not in state:
                    state[s] = 1
                    stack.append((s, iter(succ[s])))
                    break
                if state[s] == 1:
                    found.add((node, s))
            else:
                state[node] = 2
                stack.pop()
    return found


def prune_infinite_loops(cfg: ControlFlowGraph) -> ControlFlowGraph:
    live = _positive_exit_reachers(cfg)
    dropped = {(u, v) for (u, v) in back_edges(cfg) if v not in live}
    if not dropped:
        return cfg
    return replace(cfg.structural(), pruned_edges=frozenset(dropped))


def solve_expected_executions(
    nodes: Sequence[str], entry: str, edges: Iterable[tuple[str, str, float]]
) -> dict[str, float]:
    """Solve ``(I - P^T) F = e_entry`` restricted to ``nodes``."""
    edges = list(edges)
    index = {b: i for i, b in enumerate(nodes)}
    n = len(nodes)
    a = np.eye(n)
    for src, dst, prob in edges:
        if src in index and dst in index:
            a[index[dst], index[src]] -= prob
    rhs = np.zeros(n)
    rhs[index[entry]] = 1.0
    try:
        f = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError:
        f = None
    if f is None or not np.all(np.isfinite(f)) or np.max(np.abs(a @ f - rhs)) > RESIDUAL_TOL * max(1.0, np.max(np.abs(f))):
        comp = _singular_component(nodes, edges)
        raise WeightSolveError(f"execution-count system is singular around blocks {sorted(comp)}", comp)
    return {b: max(0.0, float(f[index[b]])) for b in nodes}


def _singular_component(nodes: Sequence[str], edges: Iterable[tuple[str, str, float]]) -> list[str]:
    # A closed strongly connected component (no probability leaks out) makes I - P^T singular.
    succ: dict[str, set[str]] = {b: set() for b in nodes}
    for src, dst, prob in edges:
        if src in succ and dst in succ and prob > 0:
            succ[src].add(dst)
    for comp in _sccs(nodes, succ):
        inside = set(comp)
        leak = 0.0
        for src, dst, prob in edges:
            if src in inside and dst not in inside:
                leak += prob
        out_total = sum(p for s, _, p in edges if s in inside)
        if leak == 0.0 and out_total > 0.0:
            return sorted(comp)
    return list(nodes)


def _sccs(nodes: Sequence[str], succ: Mapping[str, set[str]]) -> list[list[str]]:
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    out: list[list[str]] = []
    counter = 0

    def visit(v: str) -> None:
        nonlocal counter
        index[v] = low[v] = counter
        counter += 1
        stack.append(v)
        on_stack.add(v)
        for w in succ[v]:
            if w not in index:
                visit(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.append(w)
                if w == v:
                    break
            out.append(comp)

    for v in nodes:
        if v not in index:
            visit(v)
    return out


def expected_executions(cfg: ControlFlowGraph) -> BlockWeights:
    live = reachable_from_entry(cfg)
    nodes = [b for b in cfg.blocks if b in live]
    edges = [(e.src, e.dst, e.probability) for e in cfg.edges]
    solved = solve_expected_executions(nodes, cfg.entry, edges)
    weights = {b: solved.get(b, 0.0) for b in cfg.blocks}
    return BlockWeights(weights, cfg.pruned_edges)


def edge_flows(cfg: ControlFlowGraph, weights: BlockWeights | Mapping[str, float]) -> dict[tuple[str, str], float]:
    """Expected number of traversals of each (unpruned) edge."""
    w = weights.weights if isinstance(weights, BlockWeights) else weights
    flows: dict[tuple[str, str], float] = {}
    for e in cfg.edges:
        flows[(e.src, e.dst)] = flows.get((e.src, e.dst), 0.0) + w.get(e.src, 0.0) * e.probability
    return flows


def normalized_weights(w: BlockWeights | Mapping[str, float]) -> dict[str, float]:
    values = w.weights if isinstance(w, BlockWeights) else w
    total = sum(values.values())
    if not values or total <= 0.0:
        raise ValueError("cannot normalize an empty or all-zero weight vector")
    return {b: v / total for b, v in values.items()}


__all__ = [
    "BlockWeights",
    "WeightSolveError",
    "back_edges",
    "edge_flows",
    "expected_executions",
    "normalized_weights",
    "prune_infinite_loops",
    "solve_expected_executions",
]
