"""Partitioning reservoir sampling.

Memory maintenance in two halves. The *partition* turns running class
frequencies into target memory ratios ``p_i = n_i**rho / sum_j n_j**rho``.
The *maintenance* step admits a new example with a probability biased
toward rare classes, then evicts the stored sample whose removal moves the
memory's class histogram closest to the target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    EmptyLabelError,
    LabeledExample,
    ReplayMemory,
    RunningStats,
    StepRecord,
)

# Absolute slack when comparing removal distances; distances are sums of
# at most a few thousand terms of magnitude <= capacity.
TIE_TOL = 1e-9


class NoOverOccupiedClass(Exception):
    """Raised by :func:`select_out_class` when no class exceeds its target."""


@dataclass(frozen=True, eq=False)
class TargetPartition:
    rho: float
    ratios: np.ndarray  # p_i, zero for unobserved classes
    quotas: np.ndarray  # m_i = m * p_i, real valued
    observed: np.ndarray  # bool mask, n_i > 0

    @property
    def num_classes(self) -> int:
        return self.ratios.size

    def padded(self, num_classes: int) -> "TargetPartition":
        if num_classes <= self.num_classes:
            return self
        extra = num_classes - self.num_classes
        return TargetPartition(
            self.rho,
            np.concatenate([self.ratios, np.zeros(extra)]),
            np.concatenate([self.quotas, np.zeros(extra)]),
            np.concatenate([self.observed, np.zeros(extra, dtype=bool)]),
        )


@dataclass(frozen=True, eq=False)
class DeltaVector:
    values: np.ndarray  # l_i - p_i * sum_j l_j
    observed: np.ndarray


def compute_partition(stats: RunningStats | Sequence[float], rho: float, m: int) -> TargetPartition:
    counts = stats.counts() if isinstance(stats, RunningStats) else np.asarray(stats, dtype=np.float64)
    observed = counts > 0
    if not observed.any():
        raise ValueError("cannot partition memory before any class has been observed")
    if not np.isfinite(rho):
        raise ValueError(f"rho must be finite, got {rho}")
    weights = np.zeros_like(counts)
    weights[observed] = np.power(counts[observed], rho)
    ratios = weights / weights.sum()
    return TargetPartition(float(rho), ratios, m * ratios, observed)


def sample_in_probability(
    example: LabeledExample, stats: RunningStats, partition: TargetPartition
) -> float:
    """Admission probability ``s = sum_i (m_i / n_i) * w_i`` over the example's classes.

    ``w`` is a softmax of ``-n_i`` restricted to the set label bits, so the
    rarest class of the example dominates. Shifting by the smallest ``n_i``
    keeps the exponentials finite for large counts. Clamped to [0, 1].
    """
    if not example.labels:
        raise EmptyLabelError(f"example {example.id} has no labels")
    idx = np.asarray(example.labels)
    n = stats.counts()[idx]
    if np.any(n < 1):
        raise ValueError(f"example {example.id}: running stats do not include its classes")
    w = np.exp(-(n - n.min()))
    w /= w.sum()
    s = float(np.sum(partition.padded(idx.max() + 1).quotas[idx] / n * w))
    return min(1.0, max(0.0, s))


def delta_vector(memory: ReplayMemory, partition: TargetPartition) -> DeltaVector:
    size = max(partition.num_classes, len(memory.class_counts))
    part = partition.padded(size)
    l = memory.counts(size)
    values = l - part.ratios * l.sum()
    return DeltaVector(values, part.observed | (l > 0))


def select_out_class(delta: DeltaVector, rng: np.random.Generator) -> int:
    """Draw an over-occupied class with probability softmax(delta) over the positive entries."""
    over = np.flatnonzero(delta.values > 0)
    if over.size == 0:
        raise NoOverOccupiedClass("no class exceeds its target share")
    if over.size == 1:
        return int(over[0])
    d = delta.values[over]
    e = np.exp(d - d.max())
    return int(rng.choice(over, p=e / e.sum()))


def candidate_set(memory: ReplayMemory, over_class: int, delta: DeltaVector) -> list[int]:
    """Samples of ``over_class`` that carry the fewest classes not over their quota.

    Maximizes ``(not y) . q`` with ``q_i = [delta_i <= 0]`` over observed
    classes; returned ids are sorted.
    """
    members = memory.ids_with_class(over_class)
    if not members:
        raise ValueError(f"class {over_class} has no samples in memory")
    q = (delta.values <= 0) & delta.observed
    total = int(q.sum())
    best = -1
    out: list[int] = []
    for sid in members:
        # (not y) . q == sum(q) - y . q
        score = total - sum(1 for c in memory.samples[sid].labels if c < q.size and q[c])
        if score > best:
            best, out = score, [sid]
        elif score == best:
            out.append(sid)
    return out


def removal_distances(
    memory: ReplayMemory, candidates: Sequence[int], partition: TargetPartition
) -> np.ndarray:
    """Distance to the target partition after hypothetically removing each candidate.

    ``sum_i |C_ki - p_i * sum_l C_kl|`` with ``C_k = l - y^k``. Candidates
    sharing a label set share a distance, so each distinct set is scored once.
    """
    size = max(partition.num_classes, len(memory.class_counts))
    p = partition.padded(size).ratios
    l = memory.counts(size)
    by_labels: dict[tuple[int, ...], float] = {}
    out = np.empty(len(candidates))
    for row, sid in enumerate(candidates):
        labels = memory.samples[sid].labels
        dist = by_labels.get(labels)
        if dist is None:
            after = l.copy()
            after[list(labels)] -= 1.0
            dist = float(np.abs(after - p * after.sum()).sum())
            by_labels[labels] = dist
        out[row] = dist
    return out


def select_removal(
    memory: ReplayMemory,
    candidates: Sequence[int],
    partition: TargetPartition,
    rng: np.random.Generator,
) -> int:
    if not candidates:
        raise ValueError("empty candidate set")
    candidates = sorted(candidates)
    if len(candidates) == 1:
        return candidates[0]
    dist = removal_distances(memory, candidates, partition)
    tied = np.flatnonzero(dist <= dist.min() + TIE_TOL)
    if tied.size == 1:
        return candidates[int(tied[0])]
    return candidates[int(tied[rng.integers(tied.size)])]


def sample_out(
    memory: ReplayMemory, partition: TargetPartition, rng: np.random.Generator
) -> tuple[int, int | None]:
    """Choose the sample to evict. Returns ``(victim_id, over_class)``.

    When nothing is over-occupied (memory exactly on target) a uniform
    sample of the most populous class is evicted and ``over_class`` is None.
    """
    delta = delta_vector(memory, partition)
    try:
        over = select_out_class(delta, rng)
    except NoOverOccupiedClass:
        counts = memory.counts()
        largest = int(np.argmax(counts))
        members = memory.ids_with_class(largest)
        return members[int(rng.integers(len(members)))], None
    candidates = candidate_set(memory, over, delta)
    return select_removal(memory, candidates, partition, rng), over


def prs_step(
    memory: ReplayMemory,
    stats: RunningStats,
    example: LabeledExample,
    rho: float,
    rng: np.random.Generator,
) -> StepRecord:
    """Offer ``example`` to ``memory``; ``stats`` must already include it."""
    t = stats.total_seen
    if not memory.is_full:
        memory.insert(example)
        return StepRecord(t, "fill", 1.0)
    partition = compute_partition(stats, rho, memory.capacity)
    s = sample_in_probability(example, stats, partition)
    if rng.random() >= s:
        return StepRecord(t, "reject", s)
    victim, over = sample_out(memory, partition, rng)
    memory.remove(victim)
    memory.insert(example)
    return StepRecord(t, "admit", s, victim_id=victim, over_class=over)
