"""Stateful replay buffer: running stats + memory + one of the two sampling policies."""

from __future__ import annotations

import numpy as np

from .core import EmptyLabelError, LabeledExample, ReplayMemory, RunningStats, StepRecord
from .crs import crs_step
from .prs import prs_step

POLICIES = ("crs", "prs")


class ReplayBuffer:
    def __init__(self, capacity: int, policy: str = "prs", rho: float = 0.0,
                 rng: np.random.Generator | int | None = None, keep_trace: bool = False):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
        self.policy = policy
        self.rho = float(rho)
        self.memory = ReplayMemory(capacity)
        self.stats = RunningStats()
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.trace: list[StepRecord] | None = [] if keep_trace else None

    def observe(self, example: LabeledExample) -> StepRecord:
        if not example.labels:
            raise EmptyLabelError(f"example {example.id} has no labels")
        self.stats.update(example.labels)
        if self.policy == "prs":
            record = prs_step(self.memory, self.stats, example, self.rho, self.rng)
        else:
            record = crs_step(self.memory, self.stats, example, self.rng)
        if self.trace is not None:
            self.trace.append(record)
        return record

    def extend(self, examples) -> "ReplayBuffer":
        for ex in examples:
            self.observe(ex)
        return self

    def sample(self, k: int, rng: np.random.Generator) -> list[LabeledExample]:
        """Uniform replay batch; with replacement only if memory holds fewer than ``k``."""
        ids = self.memory.ids()
        if not ids or k <= 0:
            return []
        idx = rng.choice(len(ids), size=k, replace=len(ids) < k)
        return [self.memory.samples[ids[i]] for i in idx]
