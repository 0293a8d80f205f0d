"""Target hardware description: coupling graph with fidelities.

Device files are JSON::

    {
      "name": "aspen-16",
      "qubits": [0, 1, 2],
      "edges": [{"pair": [0, 1], "fidelity": 0.98}, {"pair": [1, 2], "fidelity": 0.95}],
      "single_qubit_fidelity": {"0": 0.999},
      "readout_fidelity": {"2": 0.97}
    }

Qubits missing from the two per-qubit maps default to fidelity 1.0. A SWAP on
an edge is charged as three CZs, i.e. fidelity ``f**3``.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

_COST_DIGITS = 12


class DeviceError(ValueError):
    pass


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class DeviceGraph:
    qubits: tuple[int, ...]
    edges: Mapping[tuple[int, int], float]
    single_qubit_fidelity: Mapping[int, float] = field(default_factory=dict)
    readout_fidelity: Mapping[int, float] = field(default_factory=dict)
    name: str = "device"

    def __post_init__(self):
        qs = set(self.qubits)
        if len(qs) != len(self.qubits):
            raise DeviceError("duplicate qubit id")
        object.__setattr__(self, "qubits", tuple(sorted(qs)))
        edges: dict[tuple[int, int], float] = {}
        for (a, b), f in self.edges.items():
            if a not in qs or b not in qs:
                raise DeviceError(f"edge ({a}, {b}) uses an unknown qubit")
            if a == b:
                raise DeviceError(f"self-loop edge on qubit {a}")
            key = _pair(a, b)
            if key in edges:
                raise DeviceError(f"duplicate edge {key}")
            edges[key] = _check_fidelity(f, f"edge {key}")
        object.__setattr__(self, "edges", edges)
        for attr in ("single_qubit_fidelity", "readout_fidelity"):
            table = {}
            for q, f in getattr(self, attr).items():
                if q not in qs:
                    raise DeviceError(f"{attr} given for unknown qubit {q}")
                table[q] = _check_fidelity(f, f"{attr}[{q}]")
            object.__setattr__(self, attr, table)
        if not _connected(self.qubits, edges):
            raise DeviceError("device coupling graph is disconnected")

    @property
    def n_qubits(self) -> int:
        return len(self.qubits)

    @cached_property
    def neighbors(self) -> dict[int, tuple[int, ...]]:
        adj: dict[int, list[int]] = {q: [] for q in self.qubits}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return {q: tuple(sorted(v)) for q, v in adj.items()}

    def is_edge(self, a: int, b: int) -> bool:
        return _pair(a, b) in self.edges

    def edge_fidelity(self, a: int, b: int) -> float:
        try:
            return self.edges[_pair(a, b)]
        except KeyError:
            raise DeviceError(f"({a}, {b}) is not a device edge") from None

    def cz_fidelity(self, a: int, b: int) -> float:
        return self.edge_fidelity(a, b)

    def swap_fidelity(self, a: int, b: int) -> float:
        return self.edge_fidelity(a, b) ** 3

    def gate_fidelity(self, q: int) -> float:
        return self.single_qubit_fidelity.get(q, 1.0)

    def measure_fidelity(self, q: int) -> float:
        return self.readout_fidelity.get(q, 1.0)

    def edge_cost(self, a: int, b: int) -> float:
        return -math.log(self.edge_fidelity(a, b))

    @cached_property
    def _paths(self) -> dict[int, dict[int, tuple[tuple[int, ...], float]]]:
        return {q: _dijkstra(self, q) for q in self.qubits}

    def shortest_path(self, a: int, b: int) -> tuple[tuple[int, ...], float]:
        if a not in self._paths or b not in self._paths:
            raise DeviceError(f"qubit {a if a not in self._paths else b} is not on the device")
        return self._paths[a][b]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "qubits": list(self.qubits),
            "edges": [{"pair": list(k), "fidelity": f} for k, f in sorted(self.edges.items())],
            "single_qubit_fidelity": {str(q): f for q, f in sorted(self.single_qubit_fidelity.items())},
            "readout_fidelity": {str(q): f for q, f in sorted(self.readout_fidelity.items())},
        }


def _check_fidelity(f: Any, what: str) -> float:
    try:
        f = float(f)
    except (TypeError, ValueError):
        raise DeviceError(f"{what}: fidelity must be a number") from None
    if not 0.0 < f <= 1.0:
        raise DeviceError(f"{what}: fidelity {f} outside (0, 1]")
    return f


def _connected(qubits, edges) -> bool:
    if not qubits:
        return False
    adj: dict[int, list[int]] = {q: [] for q in qubits}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = {qubits[0]}
    stack = [qubits[0]]
    while stack:
        for n in adj[stack.pop()]:
            if n not in seen:
                seen.add(n)
                stack.append(n)
    return len(seen) == len(qubits)


def _dijkstra(d: DeviceGraph, src: int) -> dict[int, tuple[tuple[int, ...], float]]:
    # Heap entries compare by (rounded cost, path) so equal-cost ties go to the
    # lexicographically smallest qubit sequence.
    best: dict[int, tuple[tuple[int, ...], float]] = {}
    heap: list[tuple[float, tuple[int, ...], float]] = [(0.0, (src,), 0.0)]
    while heap:
        _, path, cost = heapq.heappop(heap)
        node = path[-1]
        if node in best:
            continue
        best[node] = (path, cost)
        for n in d.neighbors[node]:
            if n not in best:
                c = cost + d.edge_cost(node, n)
                heapq.heappush(heap, (round(c, _COST_DIGITS), path + (n,), c))
    return best


def shortest_swap_path(d: DeviceGraph, a: int, b: int) -> tuple[list[int], float]:
    """Minimum ``sum(-ln f)`` path from ``a`` to ``b`` and its cost."""
    path, cost = d.shortest_path(a, b)
    return list(path), cost


def device_from_dict(data: Mapping[str, Any], name: str | None = None) -> DeviceGraph:
    try:
        qubits = [int(q) for q in data["qubits"]]
        edges: dict[tuple[int, int], float] = {}
        for item in data.get("edges", []):
            a, b = (int(x) for x in item["pair"])
            if _pair(a, b) in edges:
                raise DeviceError(f"duplicate edge {_pair(a, b)}")
            edges[_pair(a, b)] = item.get("fidelity", 1.0)
        single = {int(q): f for q, f in data.get("single_qubit_fidelity", {}).items()}
        readout = {int(q): f for q, f in data.get("readout_fidelity", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DeviceError):
            raise
        raise DeviceError(f"malformed device description: {exc}") from None
    return DeviceGraph(tuple(qubits), edges, single, readout, name or data.get("name", "device"))


def load_device(path: str | Path) -> DeviceGraph:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise DeviceError(f"device file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DeviceError(f"{path}: invalid JSON ({exc})") from None
    return device_from_dict(data, data.get("name", path.stem))


def line_device(n: int, fidelity: float = 1.0) -> DeviceGraph:
    return DeviceGraph(tuple(range(n)), {(i, i + 1): fidelity for i in range(n - 1)}, name=f"line-{n}")


def ring_device(n: int, fidelity: float = 1.0) -> DeviceGraph:
    edges = {_pair(i, (i + 1) % n): fidelity for i in range(n)}
    return DeviceGraph(tuple(range(n)), edges, name=f"ring-{n}")
