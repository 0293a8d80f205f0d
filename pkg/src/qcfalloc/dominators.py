"""Dominator tree via the iterative two-finger intersection algorithm
(Cooper, Harvey & Kennedy, "A Simple, Fast Dominance Algorithm")."""

from __future__ import annotations

from dataclasses import dataclass

from .cfg import ControlFlowGraph, reachable_from_entry


@dataclass(frozen=True)
class DominatorTree:
    idom: dict[str, str]
    entry: str

    def _check(self, b: str) -> None:
        if b not in self.idom:
            raise KeyError(f"unknown block {b!r}")

    def dominators(self, b: str) -> list[str]:
        """Dominators of ``b`` from ``b`` itself up to the entry."""
        self._check(b)
        chain = [b]
        while b != self.entry:
            b = self.idom[b]
            chain.append(b)
        return chain

    def depth(self, b: str) -> int:
        return len(self.dominators(b)) - 1


def reverse_postorder(cfg: ControlFlowGraph) -> list[str]:
    rank = {b: i for i, b in enumerate(cfg.blocks)}
    seen = {cfg.entry}
    post: list[str] = []
    stack = [(cfg.entry, iter(sorted(cfg.succ(cfg.entry), key=rank.__getitem__)))]
    while stack:
        node, it = stack[-1]
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, iter(sorted(cfg.succ(s), key=rank.__getitem__))))
                break
        else:
            post.append(node)
            stack.pop()
    return post[::-1]


def compute_dominators(cfg: ControlFlowGraph) -> DominatorTree:
    cfg = cfg.structural()
    assert reachable_from_entry(cfg) == set(cfg.blocks), "eliminate dead code before computing dominators"
    rpo = reverse_postorder(cfg)
    order = {b: i for i, b in enumerate(rpo)}
    idom: dict[str, str] = {cfg.entry: cfg.entry}

    def intersect(a: str, b: str) -> str:
        while a != b:
            while order[a] > order[b]:
                a = idom[a]
            while order[b] > order[a]:
                b = idom[b]
        return a

    changed = True
    while changed:
        changed = False
        for b in rpo[1:]:
            new = None
            for p in cfg.pred(b):
                if p in idom:
                    new = p if new is None else intersect(p, new)
            if idom.get(b) != new:
                idom[b] = new
                changed = True
    return DominatorTree(idom, cfg.entry)


def dominates(t: DominatorTree, a: str, b: str) -> bool:
    t._check(a)
    t._check(b)
    while True:
        if a == b:
            return True
        if b == t.entry:
            return False
        b = t.idom[b]


def strictly_dominates(t: DominatorTree, a: str, b: str) -> bool:
    return dominates(t, a, b) and a != b
