"""Synthetic long-tailed streams split into sequential tasks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import LabeledExample

# Child indices of the config seed's SeedSequence. Fixed so that the train
# stream and the held-out set share prototypes but not noise.
_PROTOTYPES, _LABELS, _ORDER, _NOISE, _TEST = range(5)


class ConfigError(ValueError):
    """Invalid stream configuration; the message names the offending field."""


def pareto_class_sizes(num_classes: int, alpha: float, n_max: int) -> list[int]:
    """Class sizes ``round(n_max * (i + 1) ** (-1 / alpha))``, at least 1 each."""
    if num_classes < 1 or n_max < 1:
        raise ValueError("num_classes and n_max must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    return [max(1, int(round(n_max * (i + 1) ** (-1.0 / alpha)))) for i in range(num_classes)]


def consecutive_tasks(num_classes: int, num_tasks: int) -> list[list[int]]:
    """Split ``0..C-1`` into ``num_tasks`` contiguous blocks, e.g. 10 classes -> pairs."""
    if not 1 <= num_tasks <= num_classes:
        raise ValueError("need 1 <= num_tasks <= num_classes")
    return [list(map(int, block)) for block in np.array_split(np.arange(num_classes), num_tasks)]


def interleaved_tasks(num_classes: int, num_tasks: int) -> list[list[int]]:
    """Round-robin assignment: task t gets classes t, t + T, t + 2T, ..."""
    if not 1 <= num_tasks <= num_classes:
        raise ValueError("need 1 <= num_tasks <= num_classes")
    return [list(range(t, num_classes, num_tasks)) for t in range(num_tasks)]


def random_cooccurrence(
    tasks: Sequence[Sequence[int]], num_classes: int, max_prob: float, seed: int
) -> list[list[float]]:
    """Within-task co-occurrence probabilities drawn from U(0, max_prob)."""
    rng = np.random.default_rng(seed)
    co = np.zeros((num_classes, num_classes))
    for task in tasks:
        for a in task:
            for b in task:
                if a != b:
                    co[a, b] = rng.uniform(0.0, max_prob)
    return co.tolist()


@dataclass
class StreamConfig:
    num_classes: int
    alpha: float = 0.6
    n_max: int = 1000
    feature_dim: int = 32
    noise_sigma: float = 0.3
    tasks: list[list[int]] | None = None
    cooccurrence: list[list[float]] | None = None
    seed: int = 0
    test_per_class: int = 0

    def __post_init__(self) -> None:
        if self.tasks is None:
            self.tasks = consecutive_tasks(self.num_classes, max(1, self.num_classes // 2))
        self.tasks = [[int(c) for c in t] for t in self.tasks]
        self.validate()

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ConfigError("num_classes: must be >= 1")
        if not self.alpha > 0:
            raise ConfigError("alpha: must be > 0")
        if self.n_max < 1:
            raise ConfigError("n_max: must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim: must be >= 1")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma: must be >= 0")
        if self.test_per_class < 0:
            raise ConfigError("test_per_class: must be >= 0")
        seen: dict[int, int] = {}
        for t, task in enumerate(self.tasks):
            if not task:
                raise ConfigError(f"tasks: task {t} is empty")
            for c in task:
                if not 0 <= c < self.num_classes:
                    raise ConfigError(f"tasks: class {c} outside 0..{self.num_classes - 1}")
                if c in seen:
                    raise ConfigError(f"tasks: class {c} appears in task {seen[c]} and task {t}")
                seen[c] = t
        if self.cooccurrence is not None:
            co = np.asarray(self.cooccurrence, dtype=np.float64)
            if co.shape != (self.num_classes, self.num_classes):
                raise ConfigError(f"cooccurrence: expected {self.num_classes}x{self.num_classes} matrix")
            if np.any(co < 0) or np.any(co > 1) or not np.all(np.isfinite(co)):
                raise ConfigError("cooccurrence: entries must lie in [0, 1]")
            if np.any(np.diag(co) != 0):
                raise ConfigError("cooccurrence: diagonal must be zero")

    def task_of(self) -> dict[int, int]:
        return {c: t for t, task in enumerate(self.tasks) for c in task}

    def class_sizes(self) -> list[int]:
        return pareto_class_sizes(self.num_classes, self.alpha, self.n_max)


def _children(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def class_prototypes(config: StreamConfig) -> np.ndarray:
    """Unit-norm class centroids, one row per class, fixed by the seed."""
    rng = _children(config.seed)[_PROTOTYPES]
    protos = rng.standard_normal((config.num_classes, config.feature_dim))
    return protos / np.linalg.norm(protos, axis=1, keepdims=True)


def _draw_labels(primary: int, config: StreamConfig, task_of: dict[int, int], rng) -> list[int]:
    labels = [primary]
    if config.cooccurrence is None:
        return labels
    row = config.cooccurrence[primary]
    # extra labels stay inside the primary class's task
    for c in config.tasks[task_of[primary]]:
        if c != primary and rng.random() < row[c]:
            labels.append(c)
    return labels


def _features(labels: list[int], protos: np.ndarray, sigma: float, rng) -> np.ndarray:
    mean = protos[labels].mean(axis=0)
    return mean + sigma * rng.standard_normal(protos.shape[1])


def gen_stream(config: StreamConfig) -> list[LabeledExample]:
    """Materialize the training stream: tasks in order, each internally shuffled."""
    config.validate()
    _, label_rng, order_rng, noise_rng, _ = _children(config.seed)
    protos = class_prototypes(config)
    sizes = config.class_sizes()
    task_of = config.task_of()

    out: list[LabeledExample] = []
    for t, task in enumerate(config.tasks):
        primaries = np.repeat(np.asarray(task, dtype=np.int64), [sizes[c] for c in task])
        primaries = primaries[order_rng.permutation(primaries.size)]
        for primary in primaries:
            labels = _draw_labels(int(primary), config, task_of, label_rng)
            feats = _features(labels, protos, config.noise_sigma, noise_rng)
            out.append(LabeledExample(len(out), feats, tuple(labels), task=t))
    return out


def gen_test_set(config: StreamConfig, per_class: int | None = None) -> list[LabeledExample]:
    """Held-out set with ``per_class`` examples per primary class, grouped by task.

    Uses the training stream's prototypes and co-occurrence model with an
    independent noise draw. Ids start at 0 and are independent of the stream's.
    """
    per_class = config.test_per_class if per_class is None else per_class
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = _children(config.seed)[_TEST]
    protos = class_prototypes(config)
    task_of = config.task_of()
    out: list[LabeledExample] = []
    for t, task in enumerate(config.tasks):
        for c in task:
            for _ in range(per_class):
                labels = _draw_labels(c, config, task_of, rng)
                feats = _features(labels, protos, config.noise_sigma, rng)
                out.append(LabeledExample(len(out), feats, tuple(labels), task=t))
    return out


def label_distribution(stream: Sequence[LabeledExample], num_classes: int | None = None) -> np.ndarray:
    """Normalized per-class label-occurrence frequencies of a stream."""
    if num_classes is None:
        num_classes = 1 + max(ex.max_class for ex in stream)
    counts = np.zeros(num_classes)
    for ex in stream:
        counts[list(ex.labels)] += 1
    return counts / counts.sum()
