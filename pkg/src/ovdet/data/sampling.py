"""Mosaic grid sampling, pseudo-negatives, and dataset mixing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from ovdet.data.federated import FederatedExample
from ovdet.errors import ConfigError, DataError


def mosaic_probabilities(max_grid: int) -> tuple[float, ...]:
    """p_k = 2 (M - k + 1) / (M (1 + M)): smaller grids sampled more often."""
    m = max_grid
    if m < 1:
        raise ConfigError("max_grid must be >= 1")
    return tuple(2.0 * (m - k + 1) / (m * (1 + m)) for k in range(1, m + 1))


@dataclass(frozen=True)
class MosaicConfig:
    max_grid: int = 3
    probs: tuple[float, ...] = field(default_factory=lambda: mosaic_probabilities(3))

    def __post_init__(self):
        if len(self.probs) != self.max_grid:
            raise ConfigError("one probability per grid size is required")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ConfigError("mosaic probabilities must sum to 1")
        if any(p < 0 for p in self.probs):
            raise ConfigError("mosaic probabilities must be non-negative")


def sample_mosaic_grid(mc: MosaicConfig, rng: np.random.Generator) -> int:
    return int(rng.choice(np.arange(1, mc.max_grid + 1), p=np.asarray(mc.probs)))


class CategoryFrequencyTable:
    """Empirical instance-label frequencies over the mixed training stream,
    computed once before training and then frozen."""

    def __init__(self, counts: dict[str, float]):
        total = float(sum(counts.values()))
        if total <= 0:
            raise DataError("frequency table needs at least one labeled instance")
        self.freq = {c: counts[c] / total for c in sorted(counts)}

    @staticmethod
    def from_examples(examples: Sequence[FederatedExample],
                      categories: Sequence[str] | None = None) -> "CategoryFrequencyTable":
        counts: dict[str, float] = {c: 0.0 for c in (categories or [])}
        for ex in examples:
            for inst in ex.instances:
                for label in inst.labels:
                    counts[label] = counts.get(label, 0.0) + 1.0
        return CategoryFrequencyTable(counts)

    def categories(self) -> list[str]:
        return list(self.freq)

    def sample_excluding(self, exclude: set[str], n: int,
                         rng: np.random.Generator) -> list[str]:
        """Draw up to ``n`` distinct categories, weighted by frequency,
        never returning excluded or zero-frequency entries."""
        names = [c for c in self.freq if c not in exclude and self.freq[c] > 0.0]
        out: list[str] = []
        weights = np.array([self.freq[c] for c in names], dtype=np.float64)
        while names and len(out) < n:
            p = weights / weights.sum()
            idx = int(rng.choice(len(names), p=p))
            out.append(names.pop(idx))
            weights = np.delete(weights, idx)
        return out


def sample_pseudo_negatives(ex: FederatedExample, table: CategoryFrequencyTable,
                            min_total: int = 50,
                            rng: np.random.Generator | None = None) -> list[str]:
    """Sampled categories that top up the image's negatives to ``min_total``.

    Draws are frequency-weighted, without replacement, and never include the
    image's positives or existing negatives. When the vocabulary cannot
    supply enough, every available category is used without error.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    exclude = set(ex.positive) | set(ex.negative)
    needed = max(0, min_total - len(ex.negative))
    return table.sample_excluding(exclude, needed, rng)


def mix_datasets(streams: Sequence[Sequence[FederatedExample]],
                 ratios: Sequence[float],
                 rng: np.random.Generator) -> Iterator[FederatedExample]:
    """Infinite stream drawing each example's source with fixed probability;
    every source repeats with a fresh shuffle per epoch."""
    if len(streams) != len(ratios):
        raise ConfigError("one ratio per stream is required")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("ratios must sum to 1")
    for s in streams:
        if len(s) == 0:
            raise DataError("cannot mix an empty source")
    queues: list[list[int]] = [[] for _ in streams]
    p = np.asarray(ratios, dtype=np.float64)
    while True:
        src = int(rng.choice(len(streams), p=p))
        if not queues[src]:
            order = rng.permutation(len(streams[src]))
            queues[src] = list(order)
        yield streams[src][queues[src].pop()]
