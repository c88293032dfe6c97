"""Conventional reservoir sampling (Vitter's Algorithm R)."""

from __future__ import annotations

import numpy as np

from .core import LabeledExample, ReplayMemory, RunningStats, StepRecord


def crs_step(
    memory: ReplayMemory,
    stats: RunningStats,
    example: LabeledExample,
    rng: np.random.Generator,
) -> StepRecord:
    """Offer ``example`` to ``memory``; ``stats`` must already include it.

    Below capacity the example is stored unconditionally. Once full it is
    admitted with probability m/n and replaces a uniformly chosen sample.
    """
    t = stats.total_seen
    if not memory.is_full:
        memory.insert(example)
        return StepRecord(t, "fill", 1.0)
    s = memory.capacity / t
    if rng.random() >= s:
        return StepRecord(t, "reject", s)
    ids = memory.ids()
    victim = ids[int(rng.integers(len(ids)))]
    memory.remove(victim)
    memory.insert(example)
    return StepRecord(t, "admit", s, victim_id=victim)
