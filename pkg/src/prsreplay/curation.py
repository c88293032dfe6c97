"""Turn a multi-label annotation corpus into mutually exclusive sequential tasks.

Classes are clustered bottom-up into groups so that as many images as
possible have all their labels inside one group, with a penalty on merging
groups that are already large. Each image then joins the task whose group
contains its whole label set, or is dropped.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np


class CurationError(ValueError):
    pass


@dataclass
class AnnotationCorpus:
    images: list[tuple[str, frozenset[str]]]
    class_vocab: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.images = [(str(i), frozenset(labels)) for i, labels in self.images]
        if not self.class_vocab:
            self.class_vocab = sorted(set().union(*(l for _, l in self.images))) if self.images else []
        vocab = set(self.class_vocab)
        for image_id, labels in self.images:
            if not labels:
                raise CurationError(f"image {image_id} has no labels")
            unknown = labels - vocab
            if unknown:
                raise CurationError(f"image {image_id} has labels outside the vocabulary: {sorted(unknown)}")

    @classmethod
    def from_records(cls, records: Iterable[dict], class_vocab: Sequence[str] | None = None) -> "AnnotationCorpus":
        return cls([(r["id"], frozenset(r["labels"])) for r in records], list(class_vocab or []))

    def class_sizes(self) -> dict[str, int]:
        sizes = {c: 0 for c in self.class_vocab}
        for _, labels in self.images:
            for c in labels:
                sizes[c] += 1
        return sizes

    def __len__(self) -> int:
        return len(self.images)


@dataclass
class GroupSet:
    groups: list[frozenset[str]]

    def __post_init__(self) -> None:
        self.groups = [frozenset(g) for g in self.groups]
        seen: set[str] = set()
        for g in self.groups:
            if seen & g:
                raise CurationError(f"groups overlap on {sorted(seen & g)}")
            seen |= g

    def __len__(self) -> int:
        return len(self.groups)


def merge_score(co: int, elem_j: int, elem_k: int, beta: float) -> float:
    """``ln(co) - beta * (elem_j + elem_k)**2``; ``-inf`` when the pair shares no image."""
    if co < 0:
        raise ValueError("co-occurrence count must be non-negative")
    if co == 0:
        return -math.inf
    return math.log(co) - beta * (elem_j + elem_k) ** 2


@dataclass
class ClusterState:
    """Snapshot of one merge iteration, exposed for inspection and testing."""

    groups: list[frozenset[str]]
    elem: list[int]
    co: dict[tuple[int, int], int]
    merged: tuple[int, int] | None


class _MaskCounter:
    """Image label sets as class bitmasks, counted once per distinct set."""

    def __init__(self, corpus: AnnotationCorpus):
        self.bit = {c: 1 << i for i, c in enumerate(corpus.class_vocab)}
        self.masks = Counter(self.mask(labels) for _, labels in corpus.images)

    def mask(self, classes: Iterable[str]) -> int:
        m = 0
        for c in classes:
            m |= self.bit[c]
        return m

    def contained(self, group_mask: int) -> int:
        return sum(n for m, n in self.masks.items() if m & ~group_mask == 0)


def _scores(groups: list[int], counter: _MaskCounter, beta: float):
    elem = [counter.contained(g) for g in groups]
    co: dict[tuple[int, int], int] = {}
    score: dict[tuple[int, int], float] = {}
    for j in range(len(groups)):
        for k in range(j + 1, len(groups)):
            # groups are disjoint and labels non-empty, so no image fits both
            c = counter.contained(groups[j] | groups[k]) - elem[j] - elem[k]
            co[j, k] = c
            score[j, k] = merge_score(c, elem[j], elem[k], beta)
    return elem, co, score


def _best_pair(score: dict[tuple[int, int], float], pairs: Iterable[tuple[int, int]]) -> tuple[int, int]:
    # max() keeps the first of equal scores; pairs arrive in lexicographic order
    return max(sorted(pairs), key=lambda p: score[p])


def clustering_steps(
    corpus: AnnotationCorpus, ngroups: int, beta: float = 1.0, min_classes: int = 1
) -> Iterator[ClusterState]:
    """Yield the state before every merge and the final state (``merged=None``).

    The merged group is appended at the end of the group list; the two
    source groups are removed.
    """
    vocab = corpus.class_vocab
    if not 1 <= ngroups <= len(vocab):
        raise CurationError(f"ngroups must lie in 1..{len(vocab)}, got {ngroups}")
    if min_classes * ngroups > len(vocab):
        raise CurationError(
            f"infeasible: {ngroups} groups of at least {min_classes} classes need "
            f"{min_classes * ngroups} classes, vocabulary has {len(vocab)}"
        )
    counter = _MaskCounter(corpus)
    groups = [counter.bit[c] for c in vocab]
    names = {counter.bit[c]: c for c in vocab}

    def as_sets(gs: list[int]) -> list[frozenset[str]]:
        return [frozenset(names[b] for b in names if b & g) for g in gs]

    def merge(a: int, b: int) -> None:
        merged = groups[a] | groups[b]
        for idx in sorted((a, b), reverse=True):
            del groups[idx]
        groups.append(merged)

    while len(groups) > ngroups:
        elem, co, score = _scores(groups, counter, beta)
        a, b = _best_pair(score, score)
        yield ClusterState(as_sets(groups), elem, co, (a, b))
        merge(a, b)

    while len(groups) > 1:
        sizes = [bin(g).count("1") for g in groups]
        short = [i for i, s in enumerate(sizes) if s < min_classes]
        if not short:
            break
        smallest = min(short, key=lambda i: (sizes[i], i))
        elem, co, score = _scores(groups, counter, beta)
        pairs = [p for p in score if smallest in p]
        a, b = _best_pair(score, pairs)
        yield ClusterState(as_sets(groups), elem, co, (a, b))
        merge(a, b)

    elem, co, _ = _scores(groups, counter, beta)
    yield ClusterState(as_sets(groups), elem, co, None)


def hierarchical_class_clustering(
    corpus: AnnotationCorpus, ngroups: int, beta: float = 1.0, min_classes: int = 1
) -> GroupSet:
    *_, final = clustering_steps(corpus, ngroups, beta, min_classes)
    return GroupSet(final.groups)


@dataclass
class TaskAssignment:
    tasks: list[AnnotationCorpus]
    dropped: list[str]

    @property
    def dropped_count(self) -> int:
        return len(self.dropped)

    def report(self) -> dict:
        return {
            "task_sizes": [len(t) for t in self.tasks],
            "dropped_count": self.dropped_count,
        }


def assign_tasks(corpus: AnnotationCorpus, groups: GroupSet) -> TaskAssignment:
    """Route every image to the group containing all of its labels; drop the rest."""
    buckets: list[list[tuple[str, frozenset[str]]]] = [[] for _ in groups.groups]
    dropped = []
    for image_id, labels in corpus.images:
        for t, g in enumerate(groups.groups):
            if labels <= g:
                buckets[t].append((image_id, labels))
                break
        else:
            dropped.append(image_id)
    vocab_order = {c: i for i, c in enumerate(corpus.class_vocab)}
    tasks = [
        AnnotationCorpus(b, sorted(g, key=vocab_order.__getitem__))
        for b, g in zip(buckets, groups.groups)
    ]
    return TaskAssignment(tasks, dropped)


def balanced_test_split(
    task_corpus: AnnotationCorpus, k_per_class: int, seed: int = 0
) -> tuple[AnnotationCorpus, AnnotationCorpus]:
    """Greedy cover giving every class at least ``k_per_class`` test images.

    Classes are visited from the scarcest up; each draws from its
    seed-shuffled images until covered. A multi-label image counts toward
    all its classes, so the test set can hold fewer than C*k images.
    Returns ``(train, test)``.
    """
    if k_per_class < 1:
        raise ValueError("k_per_class must be >= 1")
    sizes = task_corpus.class_sizes()
    deficient = sorted(c for c, n in sizes.items() if n < k_per_class + 1)
    if deficient:
        raise CurationError(
            f"classes with fewer than {k_per_class + 1} images: {', '.join(deficient)}"
        )
    rng = np.random.default_rng(seed)
    by_class: dict[str, list[int]] = {c: [] for c in sizes}
    for idx, (_, labels) in enumerate(task_corpus.images):
        for c in labels:
            by_class[c].append(idx)

    chosen: set[int] = set()
    coverage = Counter()
    order = sorted(sizes, key=lambda c: (sizes[c], c))
    for c in order:
        pool = by_class[c]
        for pos in rng.permutation(len(pool)):
            if coverage[c] >= k_per_class:
                break
            idx = pool[pos]
            if idx in chosen:
                continue
            chosen.add(idx)
            coverage.update(task_corpus.images[idx][1])

    vocab = task_corpus.class_vocab
    test = [im for i, im in enumerate(task_corpus.images) if i in chosen]
    train = [im for i, im in enumerate(task_corpus.images) if i not in chosen]
    return AnnotationCorpus(train, list(vocab)), AnnotationCorpus(test, list(vocab))


MINORITY, MODERATE, MAJORITY = "minority", "moderate", "majority"
TIERS = (MAJORITY, MODERATE, MINORITY)


def tier_of(size: int, minority_below: int = 200, majority_above: int = 900) -> str:
    if size < minority_below:
        return MINORITY
    if size > majority_above:
        return MAJORITY
    return MODERATE


def tier_split(
    train_class_sizes: Sequence[int] | dict, minority_below: int = 200, majority_above: int = 900
) -> dict:
    """Map each class (index or name) to its tier by training-set size."""
    items = train_class_sizes.items() if isinstance(train_class_sizes, dict) else enumerate(train_class_sizes)
    out = {}
    for key, size in items:
        if size < 0:
            raise ValueError(f"negative class size for {key}")
        out[key] = tier_of(size, minority_below, majority_above)
    return out
