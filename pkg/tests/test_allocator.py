import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from qcfalloc.allocator import (
    Allocation,
    AllocationError,
    AnnealConfig,
    Router,
    allocate,
    allocation_cost,
    anneal,
    compile_program,
    entry_permutations,
    exhaustive_search,
    insert_trampolines,
    inverse_swap_edges,
    lazy_route_block,
    prepare,
    rewrite_measures,
    routing_invariant_violations,
)
from qcfalloc.cfg import BasicBlock, Goto, Stop, build_cfg
from qcfalloc.device import DeviceGraph, line_device, load_device, ring_device
from qcfalloc.dominators import compute_dominators
from qcfalloc.frontend import Gate, Measure, MemRef, parse_program
from qcfalloc.simulator import exact_distribution
from helpers import logical_trace_consistent, path_permutations, random_program

FAST = AnnealConfig(iterations=400, restarts=2, seed=0)


def block(instrs, term=Stop(), bid="b"):
    return BasicBlock(bid, tuple(instrs), term)


def cz(a, b):
    return Gate("CZ", (), (a, b))


# -- cost ---------------------------------------------------------------------

def test_cost_examples():
    d = DeviceGraph((0, 1), {(0, 1): 0.9})
    empty = build_cfg(parse_program("HALT"))
    assert allocation_cost(empty, {"_b0": 1.0}, d) == 0.0
    cfg = build_cfg(parse_program("CZ 0 1\nHALT"))
    assert allocation_cost(cfg, {"_b0": 2.0}, d) == pytest.approx(0.2107, abs=1e-4)
    assert allocation_cost(cfg, {"_b0": 4.0}, d) == 2 * allocation_cost(cfg, {"_b0": 2.0}, d)


def test_cost_rejects_non_edge():
    cfg = build_cfg(parse_program("CZ 0 2\nHALT"))
    with pytest.raises(AllocationError, match="not a device edge"):
        allocation_cost(cfg, {"_b0": 1.0}, line_device(3))


# -- routing ------------------------------------------------------------------

def test_adjacent_needs_no_swap():
    routed, out = lazy_route_block(block([cz(0, 1)]), Allocation({0: 0, 1: 1}), line_device(3))
    assert routed.swaps == () and out == Allocation({0: 0, 1: 1})


def test_line_routing_tie_break():
    # Both single-SWAP routings cost the same; the first operand moves.
    routed, out = lazy_route_block(block([cz(0, 1)]), Allocation({0: 0, 1: 2}), line_device(3, 0.9))
    assert [s.pair for s in routed.swaps] == [(0, 1)]
    assert routed.block.instructions == (Gate("SWAP", (), (0, 1)), cz(1, 2))
    assert out == Allocation({0: 1, 1: 2})
    assert routed.lasting == ((0, 1),)


def test_split_point_prefers_good_edge():
    d = DeviceGraph((0, 1, 2), {(0, 1): 0.99, (1, 2): 0.8})
    routed, _ = lazy_route_block(block([cz(0, 1)]), Allocation({0: 0, 1: 2}), d)
    # Swapping over the bad edge would cost it three times; put the CZ there instead.
    assert routed.block.instructions[-1] == cz(1, 2)
    assert routed.block.instructions[0] == Gate("SWAP", (), (0, 1))


def test_single_qubit_block_identity():
    m = Allocation({0: 2, 1: 0})
    routed, out = lazy_route_block(block([Gate("RX", (math.pi,), (0,))]), m, line_device(3))
    assert out == m and routed.block.instructions == (Gate("RX", (math.pi,), (2,)),)


def test_eager_restores_mapping():
    m = Allocation({0: 0, 1: 3})
    routed, out = lazy_route_block(block([cz(0, 1), cz(0, 1)]), m, line_device(4), eager=True)
    assert out == m
    assert len(routed.swaps) == 8
    lazy, _ = lazy_route_block(block([cz(0, 1), cz(0, 1)]), m, line_device(4))
    assert len(lazy.swaps) == 2


def test_same_pair_twice_unaware_vs_aware():
    m = Allocation({0: 0, 1: 2})
    aware, _ = lazy_route_block(block([cz(0, 1), cz(0, 1)]), m, line_device(3))
    unaware, _ = lazy_route_block(block([cz(0, 1), cz(0, 1)]), m, line_device(3), eager=True)
    assert len(aware.swaps) == 1
    assert len(unaware.swaps) == 4


def test_measure_follows_swaps():
    instrs = [Measure(0, MemRef("ro", 0)), cz(0, 1), Measure(0, MemRef("ro", 1))]
    routed, _ = lazy_route_block(block(instrs), Allocation({0: 0, 1: 2}), line_device(3))
    measures = [i for i in routed.block.instructions if isinstance(i, Measure)]
    assert measures[0].qubit == 0 and measures[1].qubit == 1
    assert [m.bit.index for m in measures] == [0, 1]


def test_rewrite_measures():
    cfg = build_cfg(parse_program("DECLARE ro BIT[2]\nMEASURE 0 ro[0]\nMEASURE 0 ro[1]\nHALT"))
    b = cfg.entry
    out = rewrite_measures(cfg, {(b, 0): Allocation({0: 3}), (b, 1): Allocation({0: 5})})
    assert [i.qubit for i in out.blocks[b].instructions] == [3, 5]
    with pytest.raises(AllocationError, match="unmapped"):
        rewrite_measures(cfg, {(b, 0): Allocation({0: 3}), (b, 1): Allocation({})})


# -- inverse swaps and trampolines -------------------------------------------

SELF_LOOP = "DECLARE ro BIT[1]\nLABEL @b\nCZ 0 1\nMEASURE 2 ro[0]\nJUMP-WHEN @b ro[0]\nHALT"
ARMS = ("DECLARE ro BIT[1]\nMEASURE 2 ro[0]\nJUMP-WHEN @B ro[0]\nLABEL @A\nCZ 0 1\nJUMP @M\n"
        "LABEL @B\nRX(pi) 0\nLABEL @M\nHALT")


def test_inverse_swap_self_loop():
    cfg = build_cfg(parse_program(SELF_LOOP))
    t = compute_dominators(cfg)
    assert ("b", "b") in inverse_swap_edges(cfg, t, "b")


def test_inverse_swap_conditional_arm():
    cfg = build_cfg(parse_program(ARMS))
    t = compute_dominators(cfg)
    assert inverse_swap_edges(cfg, t, "A") == {("A", "M")}


def test_inverse_swap_chain_empty():
    cfg = build_cfg(parse_program("CZ 0 1\nJUMP @a\nLABEL @a\nJUMP @b\nLABEL @b\nHALT"))
    t = compute_dominators(cfg)
    assert inverse_swap_edges(cfg, t, "_b0") == set()


def test_trampoline_single_swap():
    cfg = build_cfg(parse_program(ARMS))
    out = insert_trampolines(cfg, {("A", "M"): [(3, 4)]})
    tramp = out.blocks["_undo_A_M"]
    assert tramp.instructions == (Gate("SWAP", (), (3, 4)),)
    assert tramp.terminator == Goto("M")
    assert out.blocks["A"].terminator == Goto("_undo_A_M")


def test_trampoline_reverses_order():
    cfg = build_cfg(parse_program(ARMS))
    out = insert_trampolines(cfg, {("A", "M"): [(0, 1), (1, 2)]})
    assert [i.qubits for i in out.blocks["_undo_A_M"].instructions] == [(1, 2), (0, 1)]
    # Applying s1, s2 and then the trampoline is the identity permutation.
    perm = list(range(3))
    for p, q in [(0, 1), (1, 2), (1, 2), (0, 1)]:
        perm[p], perm[q] = perm[q], perm[p]
    assert perm == [0, 1, 2]


def test_trampoline_empty_plan():
    cfg = build_cfg(parse_program(ARMS))
    assert insert_trampolines(cfg, {}) is cfg


def test_trampoline_on_fallthrough_edge():
    cfg = build_cfg(parse_program(ARMS))
    out = insert_trampolines(cfg, {(cfg.entry, "A"): [(0, 1)]})
    t = out.blocks[cfg.entry].terminator
    assert t.fallthrough == "_undo__b0_A" and t.taken == "B"


# -- annealing ----------------------------------------------------------------

def test_single_logical_picks_best_qubit():
    d = DeviceGraph((0, 1, 2), {(0, 1): 0.9, (1, 2): 0.9}, {0: 0.99, 1: 0.999, 2: 0.999})
    cfg, w = prepare(parse_program("RX(pi) 0\nHALT"))
    a = allocate(cfg, w, d, AnnealConfig(iterations=200, seed=3))
    assert a.entry_mapping == Allocation({0: 1})


def test_heavy_block_gets_good_edge():
    # Block L runs 100 times on average; its pair should sit on the 0.99 edge.
    text = ("DECLARE ro BIT[1]\nCZ 2 3\nLABEL @L\nCZ 0 1\nMEASURE 4 ro[0]\n"
            "PRAGMA BRANCH_PROBABILITY 0.99\nJUMP-WHEN @L ro[0]\nHALT")
    d = DeviceGraph(tuple(range(6)), {(0, 1): 0.99, (1, 2): 0.5, (2, 3): 0.8, (3, 4): 0.5, (4, 5): 0.5})
    cfg, w = prepare(parse_program(text))
    assert w["L"] == pytest.approx(100.0)
    a = allocate(cfg, w, d, AnnealConfig(seed=1))
    assert {a.entry_mapping[0], a.entry_mapping[1]} == {0, 1}
    assert {a.entry_mapping[2], a.entry_mapping[3]} == {2, 3}


def test_three_qubit_line_exhaustive():
    text = "CZ 0 1\nCZ 1 2\nCZ 0 2\nCZ 0 2\nHALT"
    d = DeviceGraph((0, 1, 2), {(0, 1): 0.95, (1, 2): 0.9})
    cfg, w = prepare(parse_program(text))
    router = Router(cfg, w.weights, d)
    _, best = exhaustive_search(router)
    _, found = anneal(router, AnnealConfig(seed=7))
    assert found == pytest.approx(best, abs=1e-12)


def test_device_too_small():
    with pytest.raises(AllocationError, match="device too small"):
        compile_program(parse_program("CZ 0 1\nCZ 1 2\nHALT"), line_device(2), FAST)


def test_anneal_config_validation():
    with pytest.raises(ValueError):
        AnnealConfig(iterations=0)
    with pytest.raises(ValueError):
        AnnealConfig(alpha=1.5)


def test_deterministic():
    p = parse_program(ARMS)
    d = ring_device(5, 0.95)
    a = compile_program(p, d, AnnealConfig(iterations=500, seed=42))
    b = compile_program(p, d, AnnealConfig(iterations=500, seed=42))
    assert a.program == b.program and a.cost == b.cost


def test_unaware_without_two_qubit_gates():
    p = parse_program("DECLARE ro BIT[1]\nRX(pi) 0\nRZ(pi/2) 1\nMEASURE 0 ro[0]\nHALT")
    d = line_device(3)
    aware = compile_program(p, d, FAST)
    unaware = compile_program(p, d, FAST, cf_unaware=True)
    assert aware.swap_count == unaware.swap_count == 0
    assert [type(i) for i in aware.program.instructions] == [type(i) for i in unaware.program.instructions]


def test_trampoline_weights_are_edge_flows():
    p = parse_program(SELF_LOOP.replace("CZ 0 1", "CZ 0 1\nCZ 0 2"))
    d = line_device(3, 0.9)
    a = compile_program(p, d, FAST)
    assert not routing_invariant_violations(a, d)
    for tb in a.trampolines:
        assert a.weights[tb] == pytest.approx(0.5)


def test_benchmark_aware_beats_unaware(benchmark_text, aspen_path):
    p = parse_program(benchmark_text)
    d = load_device(aspen_path)
    cfg, w = prepare(p)
    config = AnnealConfig(seed=42)
    aware = compile_program(p, d, config)
    unaware = compile_program(p, d, config, cf_unaware=True)
    assert unaware.swap_count >= aware.swap_count
    true_weights = dict(w.weights)
    true_weights.update({tb: aware.weights[tb] for tb in aware.trampolines})
    assert allocation_cost(unaware.cfg, w.weights, d) >= allocation_cost(aware.cfg, true_weights, d)
    assert aware.cost == pytest.approx(allocation_cost(aware.cfg, true_weights, d))
    for a in (aware, unaware):
        assert not routing_invariant_violations(a, d)


# -- properties ---------------------------------------------------------------

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_routing_invariant_random(seed):
    rng = random.Random(seed)
    p = random_program(rng, swap_gates=False)
    d = rng.choice([line_device(6, 0.97), ring_device(7, 0.95)])
    a = compile_program(p, d, AnnealConfig(iterations=100, restarts=1, seed=seed))
    assert routing_invariant_violations(a, d) == []
    assert all(len(v) == 1 for v in entry_permutations(a, d).values())
    assert all(len(v) <= 1 for v in path_permutations(a.program).values())
    for ins in a.program.instructions:
        if isinstance(ins, Gate) and len(ins.qubits) == 2:
            assert d.is_edge(*ins.qubits)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_allocated_program_equivalent(seed):
    rng = random.Random(seed)
    p = random_program(rng, n_blocks=rng.randint(1, 5))
    d = ring_device(6, 0.95)
    for unaware in (False, True):
        a = compile_program(p, d, AnnealConfig(iterations=100, restarts=1, seed=seed), cf_unaware=unaware)
        try:
            e1 = exact_distribution(p, cutoff=1e-7, max_branches=20000)
            e2 = exact_distribution(a.program, cutoff=1e-7, max_branches=20000)
        except Exception as exc:  # deep loop nests blow up exact enumeration
            if "too many" in str(exc):
                return
            raise
        for k in set(e1) | set(e2):
            assert e1.get(k, 0.0) == pytest.approx(e2.get(k, 0.0), abs=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_straight_line_trace(seed):
    rng = random.Random(seed)
    p = random_program(rng, n_blocks=1, max_gates=12, swap_gates=False)
    d = line_device(6, 0.9)
    for unaware in (False, True):
        a = compile_program(p, d, AnnealConfig(iterations=100, restarts=1, seed=seed), cf_unaware=unaware)
        assert logical_trace_consistent(p, a.program, dict(a.entry_mapping.l2p))
