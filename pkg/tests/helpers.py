"""Random program generators and brute-force oracles shared by the tests."""

from __future__ import annotations

import random
from fractions import Fraction
from itertools import permutations

import numpy as np

from qcfalloc.cfg import ControlFlowGraph, build_cfg
from qcfalloc.frontend import Gate, Measure, parse_program

ONE_Q = ["RX(pi/2)", "RX(-pi/2)", "RX(pi)", "RZ(pi/4)", "RZ(-pi/3)", "RZ(pi)"]


def random_program_text(
    rng: random.Random,
    n_blocks: int | None = None,
    n_qubits: int | None = None,
    *,
    backward_jumps: bool = False,
    pragmas: bool = True,
    max_gates: int = 4,
    swap_gates: bool = True,
) -> str:
    """A random program of labeled blocks.

    The last qubit is a coin: every conditional jump is preceded by
    ``RX(pi/2) coin; MEASURE coin ro[0]``, so loops built from conditional
    back edges terminate with probability one. Unconditional jumps go forward
    unless ``backward_jumps`` is set. With ``swap_gates=False`` the program
    contains no SWAP of its own, so every SWAP in a compiled version of it was
    inserted by routing.
    """
    n_blocks = n_blocks or rng.randint(1, 10)
    n_qubits = n_qubits or rng.randint(2, 6)
    coin = n_qubits - 1
    data = list(range(max(1, coin)))
    lines = ["DECLARE ro BIT[2]"]
    for k in range(n_blocks):
        if k > 0 or rng.random() < 0.5:
            lines.append(f"LABEL @B{k}")
        for _ in range(rng.randint(0, max_gates)):
            r = rng.random()
            if r < 0.45 and len(data) >= 2:
                a, b = rng.sample(data, 2)
                name = "SWAP" if swap_gates and rng.random() < 0.2 else "CZ"
                lines.append(f"{name} {a} {b}")
            elif r < 0.9:
                lines.append(f"{rng.choice(ONE_Q)} {rng.choice(data)}")
            else:
                lines.append(f"MEASURE {rng.choice(data)} ro[1]")
        last = k == n_blocks - 1
        kind = "halt" if last else rng.choice(["cond", "cond", "jump", "fall", "halt"])
        if kind == "cond":
            target = rng.randrange(n_blocks)
            lines.append(f"RX(pi/2) {coin}")
            lines.append(f"MEASURE {coin} ro[0]")
            if pragmas and rng.random() < 0.5:
                lines.append(f"PRAGMA BRANCH_PROBABILITY {rng.choice([0.1, 0.25, 0.5, 0.75, 0.9])}")
            lines.append(f"JUMP-{rng.choice(['WHEN', 'UNLESS'])} @B{target} ro[0]")
        elif kind == "jump":
            lo = 0 if backward_jumps else k + 1
            lines.append(f"JUMP @B{rng.randrange(lo, n_blocks)}")
        elif kind == "halt":
            lines.append("HALT")
    text = "\n".join(lines) + "\n"
    # Targets may point at B0 when the entry block was left unlabeled.
    if "LABEL @B0" not in text and "@B0" in text:
        text = text.replace("DECLARE ro BIT[2]\n", "DECLARE ro BIT[2]\nLABEL @B0\n", 1)
    return text


def random_program(rng: random.Random, **kw):
    return parse_program(random_program_text(rng, **kw))


def random_cfg(rng: random.Random, **kw) -> ControlFlowGraph:
    return build_cfg(random_program(rng, **kw))


# -- graph oracles ------------------------------------------------------------

def simple_paths(cfg: ControlFlowGraph, src: str, dst: str):
    """Every simple path from ``src`` to ``dst`` in the structural graph."""
    g = cfg.structural()
    out = []
    stack = [(src, [src])]
    while stack:
        node, path = stack.pop()
        if node == dst:
            out.append(path)
            continue
        for s in set(g.succ(node)):
            if s not in path:
                stack.append((s, path + [s]))
    return out


def path_dominators(cfg: ControlFlowGraph) -> dict[str, set[str]]:
    """dom(b) as the intersection of the node sets of all simple entry->b paths."""
    doms = {}
    for b in cfg.blocks:
        paths = simple_paths(cfg, cfg.entry, b)
        if paths:
            common = set(paths[0])
            for p in paths[1:]:
                common &= set(p)
            doms[b] = common
    return doms


def brute_inverse_swap_edges(cfg: ControlFlowGraph, doms: dict[str, set[str]], b: str) -> set[tuple[str, str]]:
    out = set()
    for e in cfg.structural().edges:
        b_dom_src = b in doms[e.src]
        b_sdom_dst = b in doms[e.dst] and b != e.dst
        if b_dom_src and not b_sdom_dst:
            out.add((e.src, e.dst))
    return out


def monte_carlo_visits(cfg: ControlFlowGraph, walks: int, seed: int, max_steps: int = 100_000):
    """Mean and standard error of per-walk visit counts for every block.

    Walkers start at the entry and follow unpruned edges with their
    probabilities; probability mass on pruned edges (and on blocks without
    successors) ends the walk.
    """
    blocks = list(cfg.blocks)
    idx = {b: i for i, b in enumerate(blocks)}
    n = len(blocks)
    exit_state = n
    trans = np.zeros((n, n + 1))
    for e in cfg.edges:
        trans[idx[e.src], idx[e.dst]] += e.probability
    trans[:, exit_state] = np.clip(1.0 - trans[:, :n].sum(axis=1), 0.0, None)
    cum = np.cumsum(trans, axis=1)
    cum[:, -1] = 1.0

    gen = np.random.default_rng(seed)
    counts = np.zeros((walks, n), dtype=np.int64)
    alive = np.arange(walks)
    state = np.full(walks, idx[cfg.entry])
    for _ in range(max_steps):
        if alive.size == 0:
            break
        counts[alive, state] += 1
        u = gen.random(alive.size)
        nxt = (u[:, None] >= cum[state]).sum(axis=1)
        keep = nxt != exit_state
        alive, state = alive[keep], nxt[keep]
    else:
        raise RuntimeError("walks did not terminate")
    mean = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / np.sqrt(walks)
    return {b: float(mean[i]) for b, i in idx.items()}, {b: float(se[i]) for b, i in idx.items()}


# -- routing oracles ----------------------------------------------------------

def path_permutations(program, max_paths: int = 2000, max_edge_uses: int = 2) -> dict[str, set[tuple]]:
    """Physical permutation at each block entry over enumerated entry paths.

    Works on the emitted program itself: each SWAP gate found in a block is
    applied to the running permutation. Paths may traverse each edge at most
    ``max_edge_uses`` times, which covers every loop at least twice.
    """
    cfg = build_cfg(program).structural()
    qubits = sorted(program.qubits)
    pos = {q: i for i, q in enumerate(qubits)}
    swaps = {
        b: [ins.qubits for ins in blk.instructions if isinstance(ins, Gate) and ins.name == "SWAP"]
        for b, blk in cfg.blocks.items()
    }
    seen: dict[str, set[tuple]] = {b: set() for b in cfg.blocks}
    start = tuple(range(len(qubits)))
    stack = [(cfg.entry, start, {})]
    explored = 0
    while stack and explored < max_paths * 10:
        b, perm, used = stack.pop()
        explored += 1
        seen[b].add(perm)
        s = list(perm)
        for p, q in swaps[b]:
            i, j = pos[p], pos[q]
            s[i], s[j] = s[j], s[i]
        out = tuple(s)
        for nxt in set(cfg.succ(b)):
            k = used.get((b, nxt), 0)
            if k < max_edge_uses:
                u = dict(used)
                u[(b, nxt)] = k + 1
                stack.append((nxt, out, u))
    return seen


def logical_trace_consistent(original, allocated, entry_mapping: dict[int, int]) -> bool:
    """Along the straight-line program order, every non-SWAP instruction of the
    allocated program acts on the physical qubits currently holding the
    logical operands of the matching original instruction (branch-free only)."""
    phys_of = dict(entry_mapping)
    orig = [i for i in original.instructions if isinstance(i, (Gate, Measure))]
    it = iter(orig)
    for ins in allocated.instructions:
        if isinstance(ins, Gate) and ins.name == "SWAP":
            a, b = ins.qubits
            inv = {p: l for l, p in phys_of.items()}
            la, lb = inv.get(a), inv.get(b)
            if la is not None:
                phys_of[la] = b
            if lb is not None:
                phys_of[lb] = a
            continue
        if not isinstance(ins, (Gate, Measure)):
            continue
        o = next(it, None)
        if o is None:
            return False
        if isinstance(o, Gate):
            if not isinstance(ins, Gate) or o.name != ins.name or o.params != ins.params:
                return False
            if tuple(phys_of[q] for q in o.qubits) != ins.qubits:
                return False
        else:
            if not isinstance(ins, Measure) or ins.bit != o.bit or phys_of[o.qubit] != ins.qubit:
                return False
    return next(it, None) is None


def all_placements(physical, n):
    return list(permutations(physical, n))


def _swap_table(program):
    cfg = build_cfg(program).structural()
    qubits = sorted(program.qubits)
    pos = {q: i for i, q in enumerate(qubits)}
    swaps = {
        b: [(pos[a], pos[c]) for ins in blk.instructions
            if isinstance(ins, Gate) and ins.name == "SWAP" for a, c in [ins.qubits]]
        for b, blk in cfg.blocks.items()
    }
    return cfg, len(qubits), swaps


def simple_path_permutations(program) -> dict[str, set[tuple]]:
    """Permutation at each block entry for every simple entry->block path."""
    cfg, n, swaps = _swap_table(program)
    seen: dict[str, set[tuple]] = {b: set() for b in cfg.blocks}
    stack = [(cfg.entry, tuple(range(n)), frozenset([cfg.entry]))]
    while stack:
        b, perm, on_path = stack.pop()
        seen[b].add(perm)
        s = list(perm)
        for i, j in swaps[b]:
            s[i], s[j] = s[j], s[i]
        out = tuple(s)
        for nxt in set(cfg.succ(b)):
            if nxt not in on_path:
                stack.append((nxt, out, on_path | {nxt}))
            else:
                # Closing a cycle: the permutation on re-entry must match too.
                seen[nxt].add(out)
    return seen


def exact_weights(cfg: ControlFlowGraph) -> dict[str, Fraction]:
    """Expected executions by Gauss-Jordan elimination over exact rationals.

    Probabilities are read through their decimal repr, so 0.1 is 1/10. Blocks
    not reachable from the entry over unpruned edges get 0.
    """
    reach = {cfg.entry}
    todo = [cfg.entry]
    while todo:
        b = todo.pop()
        for s in cfg.succ(b):
            if s not in reach:
                reach.add(s)
                todo.append(s)
    nodes = [b for b in cfg.blocks if b in reach]
    idx = {b: i for i, b in enumerate(nodes)}
    n = len(nodes)
    a = [[Fraction(int(i == j)) for j in range(n)] + [Fraction(int(nodes[i] == cfg.entry))] for i in range(n)]
    for e in cfg.edges:
        if e.src in idx and e.dst in idx:
            a[idx[e.dst]][idx[e.src]] -= Fraction(repr(e.probability))
    for col in range(n):
        pivot = next(r for r in range(col, n) if a[r][col] != 0)
        a[col], a[pivot] = a[pivot], a[col]
        inv = 1 / a[col][col]
        a[col] = [x * inv for x in a[col]]
        for r in range(n):
            if r != col and a[r][col] != 0:
                f = a[r][col]
                a[r] = [x - f * y for x, y in zip(a[r], a[col])]
    out = {b: Fraction(0) for b in cfg.blocks}
    for b, i in idx.items():
        out[b] = a[i][n]
    return out
