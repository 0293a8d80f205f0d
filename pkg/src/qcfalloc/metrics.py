"""Outcome-distribution statistics: squared statistical overlap and R²."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .rng import derive_seed


@dataclass(frozen=True)
class Histogram:
    counts: Mapping[str, int]
    trials: int

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in self.counts.items() if int(v) != 0}
        if any(v < 0 for v in counts.values()):
            raise ValueError("histogram counts must be nonnegative")
        if sum(counts.values()) != self.trials:
            raise ValueError(f"counts sum to {sum(counts.values())}, expected {self.trials} trials")
        object.__setattr__(self, "counts", dict(sorted(counts.items())))

    @classmethod
    def from_samples(cls, samples: Iterable[str]) -> "Histogram":
        counts: dict[str, int] = {}
        for s in samples:
            counts[s] = counts.get(s, 0) + 1
        return cls(counts, sum(counts.values()))

    def probabilities(self) -> dict[str, float]:
        if self.trials <= 0:
            raise ValueError("histogram has no trials")
        return {k: v / self.trials for k, v in self.counts.items()}

    def merge(self, other: "Histogram") -> "Histogram":
        counts = dict(self.counts)
        for k, v in other.counts.items():
            counts[k] = counts.get(k, 0) + v
        return Histogram(counts, self.trials + other.trials)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bitstring", "count"])
        for k, v in self.counts.items():
            w.writerow([k, v])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Histogram":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or [c.strip() for c in rows[0]] != ["bitstring", "count"]:
            raise ValueError("histogram CSV must start with a 'bitstring,count' header")
        counts: dict[str, int] = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"line {lineno}: expected 2 columns, got {len(row)}")
            key, value = row[0].strip(), row[1].strip()
            try:
                n = int(value)
            except ValueError:
                raise ValueError(f"line {lineno}: count {value!r} is not an integer") from None
            if n < 0:
                raise ValueError(f"line {lineno}: negative count")
            counts[key] = counts.get(key, 0) + n
        return cls(counts, sum(counts.values()))


def load_histogram(path: str | Path) -> Histogram:
    return Histogram.from_csv(Path(path).read_text())


def sso(expected: Histogram, measured: Histogram) -> float:
    """Squared statistical overlap ``(sum_j sqrt(e_j m_j))**2`` in [0, 1]."""
    if expected.trials <= 0 or measured.trials <= 0:
        raise ValueError("cannot compare a zero-trial histogram")
    # Iterate in sorted key order on both sides so sso(a, b) == sso(b, a) bit for bit.
    keys = sorted(expected.counts.keys() & measured.counts.keys())
    total = math.fsum(math.sqrt(expected.counts[k] * measured.counts[k]) for k in keys)
    return min(1.0, total * total / (expected.trials * measured.trials))


def r_squared(predicted: Sequence[float], observed: Sequence[float]) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    if len(predicted) != len(observed):
        raise ValueError(f"length mismatch: {len(predicted)} predicted vs {len(observed)} observed")
    if not observed:
        raise ValueError("empty input")
    mean = math.fsum(observed) / len(observed)
    ss_tot = math.fsum((y - mean) ** 2 for y in observed)
    if ss_tot == 0.0:
        raise ValueError("observed values have zero variance")
    ss_res = math.fsum((y - f) ** 2 for f, y in zip(predicted, observed))
    return 1.0 - ss_res / ss_tot


def parallel_sso(p, n_trials: Sequence[int] | int, repeats: int, seed: int = 0) -> list[tuple[int, float]]:
    """Mutual SSO of two independent noiseless ``n``-trial runs, ``repeats`` times per ``n``."""
    from .simulator import run_many

    ns = [n_trials] if isinstance(n_trials, int) else list(n_trials)
    out: list[tuple[int, float]] = []
    for n in ns:
        for r in range(repeats):
            a = run_many(p, trials=n, seed=derive_seed(seed, n, r, 0)).histogram
            b = run_many(p, trials=n, seed=derive_seed(seed, n, r, 1)).histogram
            out.append((n, sso(a, b)))
    return out
