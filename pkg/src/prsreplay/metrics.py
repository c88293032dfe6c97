"""Multi-label metrics, forgetting, memory-distribution distance and gradient variance."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import ReplayMemory

METRIC_NAMES = ("C-P", "C-R", "C-F1", "O-P", "O-R", "O-F1", "mAP")


def _safe_div(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass
class MultiLabelReport:
    values: dict[str, float]
    # classes with no positive label; excluded from the C-* and mAP averages
    skipped: tuple[int, ...] = ()

    def __getitem__(self, name: str) -> float:
        return self.values[name]


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall step curve of one class.

    Items with equal scores form one block that enters the ranking together,
    so every positive in a block is credited with the precision at the end
    of the block (as if ranked after the block's negatives). With constant
    scores this gives the class prevalence.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    npos = labels.sum()
    if npos == 0:
        return float("nan")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    block_end = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[block_end]
    seen = block_end + 1
    precision = tp / seen
    recall = tp / npos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def multilabel_metrics(
    scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> MultiLabelReport:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.size == 0 or labels.size == 0:
        raise ValueError("empty evaluation input")
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs labels {labels.shape}")
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")

    pred = scores >= threshold
    tp = (pred & labels).sum(axis=0)
    fp = (pred & ~labels).sum(axis=0)
    fn = (~pred & labels).sum(axis=0)

    present = np.flatnonzero(labels.sum(axis=0) > 0)
    skipped = tuple(int(c) for c in np.flatnonzero(labels.sum(axis=0) == 0))
    cp, cr, cf = [], [], []
    aps = []
    for c in present:
        p = _safe_div(tp[c], tp[c] + fp[c])
        r = _safe_div(tp[c], tp[c] + fn[c])
        cp.append(p)
        cr.append(r)
        cf.append(_f1(p, r))
        aps.append(average_precision(scores[:, c], labels[:, c]))

    nan = float("nan")
    op = _safe_div(tp.sum(), tp.sum() + fp.sum())
    orec = _safe_div(tp.sum(), tp.sum() + fn.sum())
    values = {
        "C-P": float(np.mean(cp)) if cp else nan,
        "C-R": float(np.mean(cr)) if cr else nan,
        "C-F1": float(np.mean(cf)) if cf else nan,
        "O-P": float(op),
        "O-R": float(orec),
        "O-F1": _f1(float(op), float(orec)),
        "mAP": float(np.mean(aps)) if aps else nan,
    }
    return MultiLabelReport(values, skipped)


@dataclass
class PerformanceMatrix:
    """``values[l][j]``: metric on task ``j`` after training through task ``l`` (j <= l)."""

    metric: str
    values: list[list[float]] = field(default_factory=list)

    def add_checkpoint(self, row: Sequence[float]) -> None:
        if len(row) != len(self.values) + 1:
            raise ValueError(
                f"checkpoint {len(self.values)} needs {len(self.values) + 1} task values, got {len(row)}"
            )
        if not all(np.isfinite(row)):
            raise ValueError("performance values must be finite")
        self.values.append([float(v) for v in row])

    @property
    def num_checkpoints(self) -> int:
        return len(self.values)


def task_forgetting(perf: PerformanceMatrix, j: int, k: int) -> float:
    """Normalized forgettance of task ``j`` (0-based) once ``k`` tasks are trained.

    Largest relative drop from any earlier checkpoint to checkpoint ``k - 1``.
    Checkpoints where the task scored exactly 0 have nothing to lose and are
    skipped; if all are 0 the forgettance is 0.
    """
    current = perf.values[k - 1][j]
    ratios = [
        (perf.values[l][j] - current) / abs(perf.values[l][j])
        for l in range(j, k - 1)
        if perf.values[l][j] != 0
    ]
    return max(ratios) if ratios else 0.0


def normalized_forgetting(perf: PerformanceMatrix, k: int | None = None) -> float:
    k = perf.num_checkpoints if k is None else k
    if k < 2:
        raise ValueError("forgetting needs at least two trained tasks")
    if k > perf.num_checkpoints:
        raise ValueError(f"only {perf.num_checkpoints} checkpoints recorded, asked for k={k}")
    return float(np.mean([task_forgetting(perf, j, k) for j in range(k - 1)]))


def l1_distance(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = max(a.size, b.size)
    a = np.pad(a, (0, n - a.size))
    b = np.pad(b, (0, n - b.size))
    return float(np.abs(a - b).sum())


def memory_distribution(memory: ReplayMemory, num_classes: int | None = None) -> np.ndarray:
    l = memory.counts(num_classes)
    if l.sum() == 0:
        raise ValueError("memory is empty")
    return l / l.sum()


def memory_distribution_distance(memory: ReplayMemory, target) -> float:
    """L1 distance between the normalized class histogram of memory and a target.

    ``target`` is a TargetPartition or any vector of class ratios.
    """
    ratios = getattr(target, "ratios", target)
    return l1_distance(memory_distribution(memory), ratios)


def gradient_variance_trace(gradients: Sequence[Sequence[float]] | np.ndarray) -> float:
    """Trace of the population covariance of a set of gradient vectors."""
    if len(gradients) == 0:
        raise ValueError("need at least one gradient vector")
    dims = {len(g) for g in gradients}
    if len(dims) != 1:
        raise ValueError(f"gradient vectors have differing dimensions {sorted(dims)}")
    g = np.asarray(gradients, dtype=np.float64)
    return float(g.var(axis=0).sum())
