"""Acceptance criteria 1-10.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line (also repeated in
the terminal summary) and then asserts the same condition.

The learner criteria share one frozen setup: 20 classes, Pareto alpha 0.6,
n_max 3000, four interleaved tasks with random within-task co-occurrence,
memory 500, learning rate 3e-2 and seeds 0-4. It was fixed once, before these
tests were written, and is not tuned per seed.
"""

import itertools
import json
import random
import time

import numpy as np
import pytest

from prsreplay.cli import main as cli_main
from prsreplay.core import ReplayMemory, RunningStats
from prsreplay.crs import crs_step
from prsreplay.curation import AnnotationCorpus, clustering_steps, hierarchical_class_clustering, tier_split
from prsreplay.learner import ExperimentConfig, LinearModel, _arrays, loss_and_grads, run_experiment
from prsreplay.metrics import (
    METRIC_NAMES,
    PerformanceMatrix,
    gradient_variance_trace,
    l1_distance,
    memory_distribution,
    multilabel_metrics,
    normalized_forgetting,
)
from prsreplay.prs import candidate_set, compute_partition, delta_vector, removal_distances, sample_out
from prsreplay.replay import ReplayBuffer
from prsreplay.streamgen import (
    StreamConfig,
    gen_stream,
    gen_test_set,
    interleaved_tasks,
    label_distribution,
    pareto_class_sizes,
    random_cooccurrence,
)

from conftest import ACCEPTANCE_LINES, ex
from oracles import clustering_oracle, counting_metrics, sample_out_oracle

SEEDS = range(5)
NUM_CLASSES = 20
MEMORY = 500
LR = 3e-2


def report(n, ok, detail):
    line = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def stream_config(seed):
    tasks = interleaved_tasks(NUM_CLASSES, 4)
    return StreamConfig(
        NUM_CLASSES, alpha=0.6, n_max=3000, feature_dim=32, noise_sigma=0.3, tasks=tasks,
        cooccurrence=random_cooccurrence(tasks, NUM_CLASSES, 0.2, seed), seed=seed, test_per_class=50,
    )


@pytest.fixture(scope="module")
def streams():
    out = {}
    for seed in SEEDS:
        cfg = stream_config(seed)
        out[seed] = (cfg, gen_stream(cfg), gen_test_set(cfg))
    return out


def minority_classes(stream):
    sizes = np.zeros(NUM_CLASSES, dtype=int)
    for e in stream:
        sizes[list(e.labels)] += 1
    tiers = tier_split(sizes.tolist())
    return [c for c, t in tiers.items() if t == "minority"]


# --- 1 -------------------------------------------------------------------------

def test_1_crs_uniformity():
    n, m, trials = 100, 10, 10_000
    items = [ex(i, 0) for i in range(n)]
    hits = np.zeros(n)
    start = time.perf_counter()
    for trial in range(trials):
        mem, stats = ReplayMemory(m), RunningStats()
        rng = np.random.default_rng(trial)
        for item in items:
            stats.update(item.labels)
            crs_step(mem, stats, item, rng)
        hits[mem.ids()] += 1
    elapsed = time.perf_counter() - start
    freq = hits / trials
    sigma = np.sqrt(0.1 * 0.9 / trials)
    worst = float(np.max(np.abs(freq - 0.1)) / sigma)
    report(1, worst <= 4 and elapsed < 10,
           f"CRS inclusion: max deviation {worst:.2f} sigma (<= 4), runtime {elapsed:.1f}s (< 10s)")


# --- 2 -------------------------------------------------------------------------

def label_sets(u):
    return [frozenset(c) for r in range(1, u + 1) for c in itertools.combinations(range(u), r)]


def check_instance(sets, counts, rho, seed):
    """Compare every over-occupied class and one full sample_out draw with the oracle."""
    mem = ReplayMemory(len(sets))
    for i, y in enumerate(sets):
        mem.insert(ex(i, *sorted(y)))
    part = compute_partition(counts, rho, len(sets))
    delta = delta_vector(mem, part)
    p = part.ratios.tolist()
    argmins = {}
    for over in map(int, np.flatnonzero(delta.values > 0)):
        K_ref, dist_ref, argmin_ref = sample_out_oracle(sets, p, over)
        K = candidate_set(mem, over, delta)
        if K != K_ref:
            return False
        dist = removal_distances(mem, K, part)
        if any(abs(d - dist_ref[k]) > 1e-9 for d, k in zip(dist, K)):
            return False
        argmins[over] = argmin_ref
    victim, over = sample_out(mem, part, np.random.default_rng(seed))
    if over is None:
        return not argmins
    return victim in argmins.get(over, ())


@pytest.mark.slow
def test_2_sample_out_oracle():
    # every multiset of label sets up to these sizes, under a uniform and a skewed target
    domain = {1: 8, 2: 8, 3: 8, 4: 6, 5: 4}
    partitions = lambda u: [([1] * u, 0.0), ([2 ** i for i in range(u)], 1.0)]  # noqa: E731
    total = agree = 0
    seed = 0
    for u, max_size in domain.items():
        sets = label_sets(u)
        for size in range(1, max_size + 1):
            for combo in itertools.combinations_with_replacement(sets, size):
                for counts, rho in partitions(u):
                    seed += 1
                    total += 1
                    agree += check_instance(list(combo), counts, rho, seed)
    # random memories filling the remaining corner (4-5 classes, up to 8 samples)
    rng = random.Random(0)
    for _ in range(20_000):
        u = rng.choice([4, 5])
        sets = label_sets(u)
        combo = [rng.choice(sets) for _ in range(rng.randint(domain[u] + 1, 8))]
        counts = [rng.randint(1, 50) for _ in range(u)]
        rho = rng.choice([-1.0, -0.2, 0.0, 0.2, 1.0])
        seed += 1
        total += 1
        agree += check_instance(combo, counts, rho, seed)
    report(2, agree == total, f"sample-out vs brute force: {agree}/{total} instances agree (100% required)")


# --- 3 -------------------------------------------------------------------------

def test_3_partition_properties():
    rng = np.random.default_rng(3)
    failures = []
    for trial in range(1000):
        n = rng.integers(1, 10_000, size=int(rng.integers(2, 30)))
        # distinct counts make the ordering claims strict
        n = np.unique(n)
        rng.shuffle(n)
        for rho in (-1.0, -0.2, 0.0, 0.2, 1.0):
            p = compute_partition(n.tolist(), rho, 1000).ratios
            if abs(p.sum() - 1) > 1e-9:
                failures.append((trial, rho, "sum"))
            if rho == 0 and not np.all(p == 1 / n.size):
                failures.append((trial, rho, "uniform"))
            if rho == 1 and np.max(np.abs(p - n / n.sum())) > 1e-12:
                failures.append((trial, rho, "proportional"))
            if rho > 0 and not np.array_equal(np.argsort(p, kind="stable"), np.argsort(n, kind="stable")):
                failures.append((trial, rho, "order"))
            if rho < 0 and not np.array_equal(np.argsort(p, kind="stable"), np.argsort(-n, kind="stable")):
                failures.append((trial, rho, "reverse order"))
    report(3, not failures, f"partition properties on 1000 vectors x 5 rho values: {len(failures)} violations")


# --- 4 -------------------------------------------------------------------------

@pytest.mark.slow
def test_4_memory_balance(streams):
    start = time.perf_counter()
    rows = []
    ok = True
    for seed in SEEDS:
        _, stream, _ = streams[seed]
        minority = minority_classes(stream)
        target_in = label_distribution(stream, NUM_CLASSES)
        dist = {}
        for policy in ("prs", "crs"):
            buf = ReplayBuffer(MEMORY, policy, 0.0, rng=seed).extend(stream)
            dist[policy] = memory_distribution(buf.memory, NUM_CLASSES)
        prs_l1 = l1_distance(dist["prs"], np.full(NUM_CLASSES, 1 / NUM_CLASSES))
        crs_l1 = l1_distance(dist["crs"], target_in)
        share = {k: float(v[minority].sum()) for k, v in dist.items()}
        ok &= prs_l1 <= 0.2 and crs_l1 <= 0.2 and share["prs"] > share["crs"]
        rows.append(f"s{seed}: {prs_l1:.3f}/{crs_l1:.3f}/{share['prs']:.2f}>{share['crs']:.2f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    report(4, ok, "L1 PRS-uniform/CRS-input (<= 0.2), minority share PRS>CRS: "
           + ", ".join(rows) + f"; runtime {elapsed:.1f}s (< 120s)")


# --- 5 and 6 ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def learner_runs(streams):
    start = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        _, stream, test = streams[seed]
        for method in ("finetune", "crs", "prs"):
            cfg = ExperimentConfig(memory_size=MEMORY, lr=LR, seed=seed)
            runs[method, 0.0, seed] = run_experiment(stream, method, cfg, test)
    core_elapsed = time.perf_counter() - start
    for seed in SEEDS:
        _, stream, test = streams[seed]
        for rho in (-1.0, 1.0):
            cfg = ExperimentConfig(memory_size=MEMORY, lr=LR, seed=seed, rho=rho)
            runs["prs", rho, seed] = run_experiment(stream, "prs", cfg, test)
    return runs, core_elapsed


@pytest.mark.slow
def test_5_minority_effect(learner_runs):
    runs, elapsed = learner_runs
    minority = {m: np.mean([100 * runs[m, 0.0, s].value("C-F1", tier="minority") for s in SEEDS])
                for m in ("crs", "prs")}
    forget = {m: np.mean([runs[m, 0.0, s].value("FORGET:C-F1") for s in SEEDS])
              for m in ("finetune", "crs", "prs")}
    gap = minority["prs"] - minority["crs"]
    ok = gap >= 5 and forget["finetune"] > max(forget["crs"], forget["prs"]) and elapsed < 600
    report(5, ok, f"minority C-F1 PRS {minority['prs']:.1f} vs CRS {minority['crs']:.1f} "
           f"(gap {gap:.1f} >= 5); forgetting finetune {forget['finetune']:.3f} > "
           f"CRS {forget['crs']:.3f}, PRS {forget['prs']:.3f}; runtime {elapsed:.0f}s (< 600s)")


@pytest.mark.slow
def test_6_rho_sweep(learner_runs):
    runs, _ = learner_runs
    wins = []
    for seed in SEEDS:
        scores = {rho: runs["prs", rho, seed].value("C-F1") for rho in (-1.0, 0.0, 1.0)}
        wins.append(max(scores, key=scores.get) == 0.0)
    report(6, sum(wins) >= 4, f"overall C-F1 maximized at rho=0 on {sum(wins)}/5 seeds (>= 4)")


# --- 7 -------------------------------------------------------------------------

def test_7_pareto_total():
    total = sum(pareto_class_sizes(10, 0.6, 6000))
    rel = abs(total - 11543) / 11543
    report(7, rel <= 0.10, f"pareto_class_sizes(10, 0.6, 6000) total {total} vs 11543 ({100 * rel:.1f}% <= 10%)")


# --- 8 -------------------------------------------------------------------------

def test_8_clustering_oracle():
    rng = random.Random(8)
    agree = 0
    for _ in range(500):
        vocab = [chr(ord("A") + i) for i in range(rng.randint(2, 6))]
        images = [frozenset(rng.sample(vocab, min(rng.choice([1, 1, 2, 2, 3]), len(vocab))))
                  for _ in range(rng.randint(1, 30))]
        ngroups = rng.randint(1, len(vocab))
        beta = rng.choice([0.0, 1e-3, 0.05, 1.0])
        min_classes = rng.randint(1, max(1, len(vocab) // ngroups))
        corpus = AnnotationCorpus([(str(i), y) for i, y in enumerate(images)], vocab)
        groups = hierarchical_class_clustering(corpus, ngroups, beta, min_classes).groups
        steps = list(clustering_steps(corpus, ngroups, beta, min_classes))
        ref_groups, history = clustering_oracle(images, vocab, ngroups, beta, min_classes)
        same = groups == ref_groups and len(steps) - 1 == len(history)
        same = same and all(s.groups == h[0] and s.merged == h[3] for s, h in zip(steps, history))
        agree += same
    report(8, agree == 500, f"clustering vs step-by-step oracle: {agree}/500 corpora identical")


# --- 9 -------------------------------------------------------------------------

def test_9_metric_oracles():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        n, c = int(rng.integers(2, 12)), int(rng.integers(1, 6))
        labels = (rng.random((n, c)) < 0.4).astype(int)
        # coarse scores produce ties and exact threshold hits
        scores = np.round(rng.random((n, c)), int(rng.integers(1, 3)))
        got = multilabel_metrics(scores, labels).values
        ref = counting_metrics(scores.tolist(), labels.tolist())
        for name in METRIC_NAMES:
            a, b = got[name], ref[name]
            if np.isnan(a) and np.isnan(b):
                continue
            worst = max(worst, abs(a - b))

    grad_rel = 0.0
    for seed in range(5):
        g = np.random.default_rng(seed)
        model = LinearModel(4, 3)
        for p in model.params:
            p[...] = g.standard_normal(p.shape) * 0.5
        batch = [ex(i, *sorted(g.choice(3, int(g.integers(1, 3)), replace=False)), dim=4) for i in range(6)]
        for e in batch:
            e.features[:] = g.standard_normal(4)
        x, y = _arrays(batch, 3)
        _, grads = loss_and_grads(model, x, y)
        analytic, numeric = [], []
        for p, gp in zip(model.params, grads):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + 1e-6
                up, _ = loss_and_grads(model, x, y)
                p[idx] = old - 1e-6
                down, _ = loss_and_grads(model, x, y)
                p[idx] = old
                numeric.append((up - down) / 2e-6)
                analytic.append(gp[idx])
        analytic, numeric = np.array(analytic), np.array(numeric)
        grad_rel = max(grad_rel, np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric))

    var_err = 0.0
    for seed in range(50):
        G = np.random.default_rng(seed).standard_normal((int(5 + seed % 7), 6)) * (1 + seed % 3)
        mean = [sum(G[:, j]) / len(G) for j in range(G.shape[1])]
        cov_diag = [sum((G[i, j] - mean[j]) ** 2 for i in range(len(G))) / len(G) for j in range(G.shape[1])]
        var_err = max(var_err, abs(gradient_variance_trace(G) - sum(cov_diag)))

    def forgetting(rows):
        perf = PerformanceMatrix("C-F1")
        for row in rows:
            perf.add_checkpoint(row)
        return normalized_forgetting(perf)

    with pytest.raises(ValueError):
        forgetting([[0.6]])
    hand = [
        forgetting([[50.0], [40.0, 70.0]]) == 0.2,
        forgetting([[0.5], [0.5, 0.7], [0.5, 0.7, 0.9]]) == 0.0,
        forgetting([[0.4], [0.5, 0.6], [0.7, 0.8, 0.9]]) <= 0.0,
        forgetting([[0.8], [0.4, 0.9]]) == 0.5,
        forgetting([[0.0], [0.0, 0.5]]) == 0.0,
    ]
    ok = worst <= 1e-12 and grad_rel <= 1e-4 and var_err <= 1e-10 and all(hand)
    report(9, ok, f"metrics max error {worst:.1e} (<= 1e-12), gradient rel error {grad_rel:.1e} (<= 1e-4), "
           f"variance trace error {var_err:.1e} (<= 1e-10), forgetting hand cases {sum(hand)}/{len(hand)}")


# --- 10 ------------------------------------------------------------------------

@pytest.mark.slow
def test_10_determinism(tmp_path, streams):
    cfg = stream_config(0)
    conf = tmp_path / "stream.json"
    conf.write_text(json.dumps({k: getattr(cfg, k) for k in cfg.__dataclass_fields__}))
    data = tmp_path / "stream.jsonl"
    assert cli_main(["generate", "--config", str(conf), "--output", str(data)]) == 0
    mismatched = []
    compared = 0
    for method in ("prs", "crs", "finetune"):
        first = tmp_path / f"{method}_a"
        args = ["run", "--stream", str(data), "--test", str(data.with_suffix(".test.jsonl")),
                "--method", method, "--memory-size", str(MEMORY), "--lr", str(LR), "--seed", "0",
                "--checkpoint-snapshots", "--out", str(first)]
        assert cli_main(args) == 0
        second = tmp_path / f"{method}_b"
        assert cli_main(["run", "--from-manifest", str(first / "manifest.json"),
                         "--checkpoint-snapshots", "--out", str(second)]) == 0
        for path in sorted(first.iterdir()):
            if path.name == "manifest.json":
                continue
            compared += 1
            if path.read_bytes() != (second / path.name).read_bytes():
                mismatched.append(f"{method}/{path.name}")

    _, stream, test = streams[1]
    for method in ("prs", "crs", "multitask"):
        cfg = ExperimentConfig(memory_size=MEMORY, lr=LR, seed=1, keep_trace=True, snapshot_checkpoints=True)
        a = run_experiment(stream, method, cfg, test)
        b = run_experiment(stream, method, cfg, test)
        compared += 1
        same = a.to_csv() == b.to_csv() and a.trace_csv() == b.trace_csv() and a.snapshots == b.snapshots
        if a.memory is not None:
            same = same and a.memory.snapshot(True) == b.memory.snapshot(True)
        if not same:
            mismatched.append(f"in-process {method}")
    report(10, not mismatched, f"identical manifests: {compared - len(mismatched)}/{compared} artifacts "
           "byte-identical")
