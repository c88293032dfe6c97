"""Shared domain types: labeled examples, running class statistics and the replay memory."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ReplayMemoryError(Exception):
    """Base class for replay-memory contract violations."""


class CapacityExceededError(ReplayMemoryError):
    pass


class DuplicateIdError(ReplayMemoryError):
    pass


class UnknownIdError(ReplayMemoryError, KeyError):
    pass


class EmptyLabelError(ValueError):
    pass


def to_multi_hot(labels: Iterable[int], num_classes: int) -> np.ndarray:
    bits = np.zeros(num_classes, dtype=np.int8)
    for c in labels:
        bits[c] = 1
    return bits


def from_multi_hot(bits: Sequence[int] | np.ndarray) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(np.asarray(bits)))


@dataclass(eq=False)
class LabeledExample:
    """One stream item.

    ``labels`` holds the sorted ids of the set bits of the multi-hot label
    vector; use :meth:`multi_hot` for the dense form. ``task`` is harness
    metadata only and is never consulted by the sampling policies.
    """

    id: int
    features: np.ndarray
    labels: tuple[int, ...]
    task: int | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"example {self.id}: non-finite features")
        labels = tuple(sorted({int(c) for c in self.labels}))
        if labels and labels[0] < 0:
            raise ValueError(f"example {self.id}: negative class id")
        self.labels = labels

    def multi_hot(self, num_classes: int) -> np.ndarray:
        return to_multi_hot(self.labels, num_classes)

    @property
    def max_class(self) -> int:
        return self.labels[-1] if self.labels else -1


@dataclass
class RunningStats:
    """Running per-class label frequencies (n_i) and datapoint count (n)."""

    per_class_count: list[int] = field(default_factory=list)
    total_seen: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.per_class_count)

    @property
    def unique_classes(self) -> int:
        return sum(1 for c in self.per_class_count if c > 0)

    def grow(self, num_classes: int) -> None:
        if num_classes > len(self.per_class_count):
            self.per_class_count.extend([0] * (num_classes - len(self.per_class_count)))

    def update(self, labels: Iterable[int]) -> "RunningStats":
        labels = list(labels)
        if labels:
            self.grow(max(labels) + 1)
        for c in labels:
            self.per_class_count[c] += 1
        self.total_seen += 1
        return self

    def counts(self, num_classes: int | None = None) -> np.ndarray:
        n = np.asarray(self.per_class_count, dtype=np.float64)
        if num_classes is not None and num_classes > n.size:
            n = np.concatenate([n, np.zeros(num_classes - n.size)])
        return n


def update_running_stats(stats: RunningStats, label: Iterable[int] | LabeledExample) -> RunningStats:
    """Record one datapoint. Accepts class ids or a whole example."""
    if isinstance(label, LabeledExample):
        label = label.labels
    return stats.update(label)


class ReplayMemory:
    """Bounded store of examples with a per-class index.

    ``class_counts[i]`` is l_i, the number of stored samples whose label
    contains class ``i``. Vectors grow with the class universe.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.samples: dict[int, LabeledExample] = {}
        self.class_index: dict[int, set[int]] = {}
        self.class_counts: list[int] = []

    def __len__(self) -> int:
        return len(self.samples)

    def __contains__(self, sample_id: int) -> bool:
        return sample_id in self.samples

    @property
    def is_full(self) -> bool:
        return len(self.samples) >= self.capacity

    def _grow(self, num_classes: int) -> None:
        if num_classes > len(self.class_counts):
            self.class_counts.extend([0] * (num_classes - len(self.class_counts)))

    def insert(self, example: LabeledExample) -> "ReplayMemory":
        if example.id in self.samples:
            raise DuplicateIdError(f"sample id {example.id} already stored")
        if len(self.samples) >= self.capacity:
            raise CapacityExceededError(
                f"memory full ({self.capacity}); remove a sample before inserting {example.id}"
            )
        self.samples[example.id] = example
        self._grow(example.max_class + 1)
        for c in example.labels:
            self.class_index.setdefault(c, set()).add(example.id)
            self.class_counts[c] += 1
        return self

    def remove(self, sample_id: int) -> LabeledExample:
        try:
            example = self.samples.pop(sample_id)
        except KeyError:
            raise UnknownIdError(f"sample id {sample_id} not in memory") from None
        for c in example.labels:
            self.class_index[c].discard(sample_id)
            self.class_counts[c] -= 1
        return example

    def ids(self) -> list[int]:
        return sorted(self.samples)

    def ids_with_class(self, class_id: int) -> list[int]:
        return sorted(self.class_index.get(class_id, ()))

    def counts(self, num_classes: int | None = None) -> np.ndarray:
        n = num_classes if num_classes is not None else len(self.class_counts)
        out = np.zeros(n, dtype=np.float64)
        k = min(n, len(self.class_counts))
        out[:k] = self.class_counts[:k]
        return out

    def recount(self) -> list[int]:
        """Class counts recomputed from the stored labels (consistency oracle)."""
        counts = [0] * len(self.class_counts)
        for ex in self.samples.values():
            for c in ex.labels:
                counts[c] += 1
        return counts

    def label_matrix(self, ids: Sequence[int], num_classes: int) -> np.ndarray:
        out = np.zeros((len(ids), num_classes), dtype=np.float64)
        for row, sid in enumerate(ids):
            out[row, list(self.samples[sid].labels)] = 1.0
        return out

    def snapshot(self, include_features: bool = False) -> dict:
        samples = []
        for sid in self.ids():
            ex = self.samples[sid]
            item: dict = {"id": sid, "labels": list(ex.labels)}
            if include_features:
                item["features"] = [float(v) for v in ex.features]
            samples.append(item)
        return {
            "capacity": self.capacity,
            "samples": samples,
            "class_counts": list(self.class_counts),
        }


def memory_insert(memory: ReplayMemory, example: LabeledExample) -> ReplayMemory:
    return memory.insert(example)


def memory_remove(memory: ReplayMemory, sample_id: int) -> ReplayMemory:
    memory.remove(sample_id)
    return memory


@dataclass(frozen=True)
class StepRecord:
    """What a memory policy did with one arriving example (one trace row)."""

    t: int
    event: str  # "fill", "admit" or "reject"
    s: float
    victim_id: int | None = None
    over_class: int | None = None
