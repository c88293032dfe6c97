"""Online multi-label learner with replay, and the experiment loop around it."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .core import LabeledExample, ReplayMemory, StepRecord
from .curation import TIERS, tier_split
from .metrics import METRIC_NAMES, PerformanceMatrix, gradient_variance_trace, multilabel_metrics, normalized_forgetting
from .replay import ReplayBuffer

METHODS = ("finetune", "crs", "prs", "multitask")
FORGET_METRICS = ("C-F1", "O-F1", "mAP")


class DivergenceError(FloatingPointError):
    pass


def _bce_with_logits(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Adam:
    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-4):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []
        self.t = 0

    def match(self, params: Sequence[np.ndarray]) -> None:
        """Zero-pad moment buffers after parameters grew (new output classes)."""
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
            return
        for i, p in enumerate(params):
            if self.m[i].shape != p.shape:
                pad = [(0, a - b) for a, b in zip(p.shape, self.m[i].shape)]
                self.m[i] = np.pad(self.m[i], pad)
                self.v[i] = np.pad(self.v[i], pad)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.match(params)
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class LinearModel:
    """One-vs-rest logistic regression; output rows are added as classes appear."""

    def __init__(self, feature_dim: int, num_classes: int = 0):
        self.feature_dim = feature_dim
        self.weights = np.zeros((num_classes, feature_dim))
        self.bias = np.zeros(num_classes)
        self.optimizer = Adam()

    @property
    def num_classes(self) -> int:
        return self.bias.size

    @property
    def params(self) -> list[np.ndarray]:
        return [self.weights, self.bias]

    def ensure_classes(self, num_classes: int) -> None:
        extra = num_classes - self.num_classes
        if extra > 0:
            self.weights = np.vstack([self.weights, np.zeros((extra, self.feature_dim))])
            self.bias = np.concatenate([self.bias, np.zeros(extra)])

    def logits(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.bias

    def backward(self, x: np.ndarray, dz: np.ndarray) -> list[np.ndarray]:
        return [dz.T @ x, dz.sum(axis=0)]

    def per_sample_gradients(self, x: np.ndarray, dz: np.ndarray) -> np.ndarray:
        gw = dz[:, :, None] * x[:, None, :]
        return np.concatenate([gw.reshape(len(x), -1), dz], axis=1)


class MLPModel:
    """One ReLU hidden layer in front of a one-vs-rest output layer."""

    def __init__(self, feature_dim: int, hidden: int, num_classes: int = 0, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.feature_dim = feature_dim
        self.hidden = hidden
        self.w1 = rng.standard_normal((hidden, feature_dim)) * math.sqrt(2.0 / feature_dim)
        self.b1 = np.zeros(hidden)
        self.weights = np.zeros((num_classes, hidden))
        self.bias = np.zeros(num_classes)
        self.optimizer = Adam()

    @property
    def num_classes(self) -> int:
        return self.bias.size

    @property
    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.weights, self.bias]

    def ensure_classes(self, num_classes: int) -> None:
        extra = num_classes - self.num_classes
        if extra > 0:
            self.weights = np.vstack([self.weights, np.zeros((extra, self.hidden))])
            self.bias = np.concatenate([self.bias, np.zeros(extra)])

    def _hidden(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x @ self.w1.T + self.b1, 0.0)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self._hidden(x) @ self.weights.T + self.bias

    def backward(self, x: np.ndarray, dz: np.ndarray) -> list[np.ndarray]:
        pre = x @ self.w1.T + self.b1
        h = np.maximum(pre, 0.0)
        dh = (dz @ self.weights) * (pre > 0)
        return [dh.T @ x, dh.sum(axis=0), dz.T @ h, dz.sum(axis=0)]

    def per_sample_gradients(self, x: np.ndarray, dz: np.ndarray) -> np.ndarray:
        rows = [np.concatenate([g.ravel() for g in self.backward(x[i:i + 1], dz[i:i + 1])])
                for i in range(len(x))]
        return np.asarray(rows)


def _arrays(batch: Sequence[LabeledExample], num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([ex.features for ex in batch])
    y = np.zeros((len(batch), num_classes))
    for row, ex in enumerate(batch):
        y[row, list(ex.labels)] = 1.0
    return x, y


def loss_and_grads(model, x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Mean binary cross-entropy over all (example, class) cells and its gradient."""
    z = model.logits(x)
    loss = float(_bce_with_logits(z, y).mean())
    dz = (_sigmoid(z) - y) / y.size
    return loss, model.backward(x, dz)


def train_step(model, input_batch: Sequence[LabeledExample],
               replay_batch: Sequence[LabeledExample], lr: float) -> float:
    """One Adam step on input + replay examples. Returns the loss before the update."""
    batch = list(input_batch) + list(replay_batch)
    if not batch:
        raise ValueError("empty training batch")
    model.ensure_classes(1 + max(ex.max_class for ex in batch))
    x, y = _arrays(batch, model.num_classes)
    if x.shape[1] != model.feature_dim:
        raise ValueError(f"feature dimension {x.shape[1]} != model dimension {model.feature_dim}")
    loss, grads = loss_and_grads(model, x, y)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss}")
    model.optimizer.step(model.params, grads, lr)
    return loss


def predict(model, features: np.ndarray) -> np.ndarray:
    """Per-class scores in (0, 1); accepts one vector or a matrix of rows."""
    x = np.asarray(features, dtype=np.float64)
    return _sigmoid(model.logits(x))


def memory_gradient_variance(model, memory: ReplayMemory, max_samples: int = 200) -> float:
    """Trace of the covariance of per-sample loss gradients over stored samples."""
    ids = memory.ids()
    if not ids or model.num_classes == 0:
        return float("nan")
    if len(ids) > max_samples:
        ids = [ids[i] for i in np.linspace(0, len(ids) - 1, max_samples).astype(int)]
    batch = [memory.samples[i] for i in ids]
    x, y = _arrays(batch, model.num_classes)
    dz = (_sigmoid(model.logits(x)) - y) / y.shape[1]
    return gradient_variance_trace(model.per_sample_gradients(x, dz))


@dataclass
class ExperimentConfig:
    memory_size: int = 2000
    batch_size: int = 10
    replay_batch: int = 10
    rho: float = 0.0
    lr: float = 1e-3
    seed: int = 0
    threshold: float = 0.5
    hidden: int = 0
    minority_below: int = 200
    majority_above: int = 900
    keep_trace: bool = False
    snapshot_checkpoints: bool = False
    grad_var_samples: int = 200

    def validate(self) -> None:
        for name in ("memory_size", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name}: must be >= 1")
        if self.replay_batch < 0:
            raise ValueError("replay_batch: must be >= 0")
        if not math.isfinite(self.rho):
            raise ValueError("rho: must be finite")
        if not self.lr >= 0:
            raise ValueError("lr: must be >= 0")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold: must lie in (0, 1)")


@dataclass
class EpisodeLog:
    method: str
    config: ExperimentConfig
    rows: list[tuple] = field(default_factory=list)  # (checkpoint, task, tier, metric, value)
    losses: list[float] = field(default_factory=list)
    snapshots: dict[int, dict] = field(default_factory=dict)
    memory: ReplayMemory | None = None
    trace: list[StepRecord] | None = None
    tiers: dict[int, str] = field(default_factory=dict)
    num_checkpoints: int = 0

    def value(self, metric: str, task="all", tier="overall", checkpoint: int = -1) -> float:
        if checkpoint < 0:
            checkpoint += self.num_checkpoints
        for c, t, tr, m, v in self.rows:
            if c == checkpoint and t == task and tr == tier and m == metric:
                return v
        raise KeyError((checkpoint, task, tier, metric))

    def performance_matrix(self, metric: str) -> PerformanceMatrix:
        perf = PerformanceMatrix(metric)
        for k in range(self.num_checkpoints):
            perf.add_checkpoint([self.value(metric, task=j, tier="all", checkpoint=k) for j in range(k + 1)])
        return perf

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["checkpoint", "task", "tier", "metric", "value"])
        for c, t, tr, m, v in self.rows:
            w.writerow([c, t, tr, m, repr(float(v))])
        return buf.getvalue()

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "event", "victim_id", "s", "over_class"])
        for r in self.trace or []:
            w.writerow([r.t, r.event, "" if r.victim_id is None else r.victim_id,
                        repr(float(r.s)), "" if r.over_class is None else r.over_class])
        return buf.getvalue()


def _segments(stream: Sequence[LabeledExample]) -> list[list[LabeledExample]]:
    """Split the stream at changes of the task tag (harness-only information)."""
    out: list[list[LabeledExample]] = []
    for ex in stream:
        if not out or ex.task != out[-1][-1].task:
            out.append([])
        out[-1].append(ex)
    return out


def _evaluate(model, test_set, test_x, test_y, segments, checkpoint, tiers, threshold):
    rows = []
    scores = np.zeros_like(test_y)
    if model.num_classes:
        k = min(model.num_classes, test_y.shape[1])
        scores[:, :k] = predict(model, test_x)[:, :k]

    def emit(task, tier, report):
        rows.extend((checkpoint, task, tier, name, report[name]) for name in METRIC_NAMES)

    for j, seg in enumerate(segments[: checkpoint + 1]):
        classes = sorted({c for ex in seg for c in ex.labels if c < test_y.shape[1]})
        tag = seg[0].task
        sel = np.array([ex.task == tag for ex in test_set])
        if not classes or not sel.any():
            continue
        emit(j, "all", multilabel_metrics(scores[np.ix_(sel, classes)], test_y[np.ix_(sel, classes)], threshold))

    emit("all", "overall", multilabel_metrics(scores, test_y, threshold))
    for tier in TIERS:
        cols = [c for c, t in tiers.items() if t == tier and c < test_y.shape[1]]
        if cols:
            emit("all", tier, multilabel_metrics(scores[:, cols], test_y[:, cols], threshold))
    return rows


def run_experiment(
    stream: Sequence[LabeledExample],
    method: str,
    config: ExperimentConfig | None = None,
    test_set: Sequence[LabeledExample] | None = None,
) -> EpisodeLog:
    """Single online pass over ``stream`` with the given memory method.

    Input batches never straddle a task boundary. Each batch is paired with
    a uniform replay batch, trained on once, then offered example by example
    to the memory. Metrics are recorded after every task and, for
    ``multitask`` (one i.i.d. epoch over the shuffled stream), once at the end.
    """
    config = config or ExperimentConfig()
    config.validate()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if not stream:
        raise ValueError("empty stream")

    seeds = np.random.SeedSequence(config.seed).spawn(4)
    policy_rng, replay_rng, shuffle_rng = (np.random.default_rng(s) for s in seeds[:3])
    init_seed = int(seeds[3].generate_state(1)[0])

    dim = stream[0].features.size
    model = MLPModel(dim, config.hidden, seed=init_seed) if config.hidden else LinearModel(dim)
    buffer = None
    if method in ("crs", "prs"):
        buffer = ReplayBuffer(config.memory_size, method, config.rho, policy_rng, config.keep_trace)

    num_classes = 1 + max(ex.max_class for ex in stream)
    class_sizes = np.zeros(num_classes, dtype=int)
    for ex in stream:
        class_sizes[list(ex.labels)] += 1
    tiers = tier_split(class_sizes.tolist(), config.minority_below, config.majority_above)

    test_set = list(test_set) if test_set is not None else list(stream)
    n_eval = max(num_classes, 1 + max(ex.max_class for ex in test_set))
    test_x, test_y = _arrays(test_set, n_eval)

    if method == "multitask":
        order = shuffle_rng.permutation(len(stream))
        segments = [[stream[i] for i in order]]
        eval_segments = _segments(stream)
    else:
        segments = eval_segments = _segments(stream)

    log = EpisodeLog(method, config, tiers=tiers)
    for k, seg in enumerate(segments):
        for start in range(0, len(seg), config.batch_size):
            batch = seg[start:start + config.batch_size]
            replay = buffer.sample(config.replay_batch, replay_rng) if buffer else []
            log.losses.append(train_step(model, batch, replay, config.lr))
            if buffer:
                for ex in batch:
                    buffer.observe(ex)

        checkpoint = len(eval_segments) - 1 if method == "multitask" else k
        rows = _evaluate(model, test_set, test_x, test_y, eval_segments, checkpoint, tiers, config.threshold)
        if method == "multitask":
            # all tasks are trained at once; relabel as a single checkpoint
            rows = [(0,) + r[1:] for r in rows]
            checkpoint = 0
        log.rows.extend(rows)
        if buffer is not None:
            log.rows.append((checkpoint, "all", "memory", "grad_var",
                             memory_gradient_variance(model, buffer.memory, config.grad_var_samples)))
            if config.snapshot_checkpoints:
                log.snapshots[checkpoint] = buffer.memory.snapshot()
        log.num_checkpoints = checkpoint + 1

    if method != "multitask" and log.num_checkpoints >= 2:
        final = log.num_checkpoints - 1
        for metric in FORGET_METRICS:
            f = normalized_forgetting(log.performance_matrix(metric))
            log.rows.append((final, "all", "overall", f"FORGET:{metric}", f))

    if buffer is not None:
        log.memory = buffer.memory
        log.trace = buffer.trace
    return log


def config_dict(config: ExperimentConfig) -> dict:
    return asdict(config)
