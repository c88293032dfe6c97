"""Class-imbalance-aware replay memories for task-free continual learning."""

from .core import (
    CapacityExceededError,
    DuplicateIdError,
    LabeledExample,
    ReplayMemory,
    RunningStats,
    StepRecord,
    UnknownIdError,
    memory_insert,
    memory_remove,
    update_running_stats,
)
from .crs import crs_step
from .prs import (
    DeltaVector,
    TargetPartition,
    candidate_set,
    compute_partition,
    delta_vector,
    prs_step,
    sample_in_probability,
    select_out_class,
    select_removal,
)
from .replay import ReplayBuffer

__version__ = "0.1.0"

__all__ = [
    "CapacityExceededError",
    "DeltaVector",
    "DuplicateIdError",
    "LabeledExample",
    "ReplayBuffer",
    "ReplayMemory",
    "RunningStats",
    "StepRecord",
    "TargetPartition",
    "UnknownIdError",
    "candidate_set",
    "compute_partition",
    "crs_step",
    "delta_vector",
    "memory_insert",
    "memory_remove",
    "prs_step",
    "sample_in_probability",
    "select_out_class",
    "select_removal",
    "update_running_stats",
]
