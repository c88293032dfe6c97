"""Command-line entry point: ``prsreplay generate | curate | run``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .curation import assign_tasks, balanced_test_split, hierarchical_class_clustering, tier_split
from .io import read_annotations, read_stream, sha256_file, write_annotations, write_json, write_stream, write_text
from .learner import METHODS, ExperimentConfig, run_experiment
from .streamgen import StreamConfig, gen_stream, gen_test_set

log = logging.getLogger("prsreplay")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _load_config(path: str | Path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping of field names to values")
    return data


def _stream_config(data: dict) -> StreamConfig:
    known = {f.name for f in fields(StreamConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config fields: {', '.join(unknown)}")
    if "num_classes" not in data:
        raise ValueError("num_classes: required")
    return StreamConfig(**data)


def cmd_generate(args) -> int:
    data = _load_config(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    config = _stream_config(data)
    stream = gen_stream(config)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_stream(out, stream)
    manifest = {
        "version": __version__,
        "config": asdict(config),
        "seed": config.seed,
        "class_sizes": config.class_sizes(),
        "num_examples": len(stream),
        "stream_sha256": sha256_file(out),
    }
    if config.test_per_class > 0:
        test_path = Path(args.test_output) if args.test_output else out.with_suffix(".test.jsonl")
        write_stream(test_path, gen_test_set(config))
        manifest["test_sha256"] = sha256_file(test_path)
    write_json(out.with_suffix(".manifest.json"), manifest)
    log.info("wrote %d examples to %s", len(stream), out)
    return EXIT_OK


def cmd_curate(args) -> int:
    corpus = read_annotations(args.annotations)
    groups = hierarchical_class_clustering(corpus, args.ngroups, args.beta, args.min_classes)
    assignment = assign_tasks(corpus, groups)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    train_sizes: dict[str, int] = {}
    test_sizes = []
    for t, task in enumerate(assignment.tasks):
        if args.k_test > 0:
            train, test = balanced_test_split(task, args.k_test, args.seed)
        else:
            train, test = task, None
        write_annotations(out / f"task{t}_train.jsonl", train)
        if test is not None:
            write_annotations(out / f"task{t}_test.jsonl", test)
            test_sizes.append(len(test))
        train_sizes.update(train.class_sizes())

    report = {
        "groups": [sorted(g) for g in groups.groups],
        "task_sizes": assignment.report()["task_sizes"],
        "test_sizes": test_sizes,
        "class_sizes": train_sizes,
        "dropped_count": assignment.dropped_count,
        "dropped_ids": assignment.dropped,
        "tier_map": tier_split(train_sizes, args.minority_below, args.majority_above),
    }
    write_json(out / "report.json", report)
    log.info("%d tasks, %d images dropped", len(groups), assignment.dropped_count)
    return EXIT_OK


RUN_FIELDS = {f.name for f in fields(ExperimentConfig)}


def _parse_sweep(text: str) -> list[float]:
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise ValueError(f"--sweep-rho expects start:stop:step, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise ValueError(f"--sweep-rho: need step > 0 and stop >= start, got {text!r}")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return [round(lo + i * step, 10) for i in range(n)]


def _run_one(stream_path: str, test_path: str | None, method: str, config: ExperimentConfig,
             out_dir: str, snapshot_features: bool) -> str:
    stream = read_stream(stream_path)
    test = read_stream(test_path) if test_path else None
    episode = run_experiment(stream, method, config, test)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "metrics.csv", episode.to_csv())
    if episode.memory is not None:
        write_json(out / "memory.json", episode.memory.snapshot(snapshot_features))
        write_text(out / "trace.csv", episode.trace_csv())
    for k, snap in episode.snapshots.items():
        write_json(out / f"memory_checkpoint{k}.json", snap)
    write_json(out / "manifest.json", {
        "version": __version__,
        "method": method,
        "config": asdict(config),
        "seed": config.seed,
        "stream": str(stream_path),
        "stream_sha256": sha256_file(stream_path),
        "test": str(test_path) if test_path else None,
        "test_sha256": sha256_file(test_path) if test_path else None,
        "snapshot_features": snapshot_features,
    })
    return str(out)


def cmd_run(args) -> int:
    settings: dict = {}
    method, stream_path, test_path = "prs", args.stream, args.test
    snapshot_features = args.snapshot_features
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text())
        settings.update(manifest["config"])
        method = manifest["method"]
        stream_path = stream_path or manifest["stream"]
        test_path = test_path or manifest.get("test")
        snapshot_features = snapshot_features or manifest.get("snapshot_features", False)
    if args.config:
        data = _load_config(args.config)
        method = data.pop("method", method)
        unknown = sorted(set(data) - RUN_FIELDS)
        if unknown:
            raise ValueError(f"unknown config fields: {', '.join(unknown)}")
        settings.update(data)
    flag_values = {
        "memory_size": args.memory_size, "batch_size": args.batch_size,
        "replay_batch": args.replay_batch, "rho": args.rho, "lr": args.lr,
        "seed": args.seed, "threshold": args.threshold, "hidden": args.hidden,
    }
    settings.update({k: v for k, v in flag_values.items() if v is not None})
    if args.method:
        method = args.method
    if args.no_trace:
        settings["keep_trace"] = False
    if args.checkpoint_snapshots:
        settings["snapshot_checkpoints"] = True
    if method not in METHODS:
        raise ValueError(f"--method must be one of {', '.join(METHODS)}")
    if not stream_path:
        raise ValueError("--stream is required")
    if not Path(stream_path).exists():
        raise ValueError(f"stream file not found: {stream_path}")
    settings.setdefault("keep_trace", True)

    base = ExperimentConfig(**settings)
    base.validate()
    if not args.sweep_rho:
        _run_one(stream_path, test_path, method, base, args.out, snapshot_features)
        return EXIT_OK

    jobs = []
    for rho in _parse_sweep(args.sweep_rho):
        cfg = ExperimentConfig(**{**asdict(base), "rho": rho})
        jobs.append((stream_path, test_path, method, cfg, str(Path(args.out) / f"rho_{rho:+.4f}"), snapshot_features))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            for done in pool.map(_run_one, *zip(*jobs)):
                log.info("finished %s", done)
    else:
        for job in jobs:
            log.info("finished %s", _run_one(*job))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prsreplay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic long-tailed stream")
    gen.add_argument("--config", required=True, help="YAML/JSON file with StreamConfig fields")
    gen.add_argument("--output", required=True)
    gen.add_argument("--test-output", help="held-out set path (default: <output>.test.jsonl)")
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=cmd_generate)

    cur = sub.add_parser("curate", help="split a multi-label annotation corpus into tasks")
    cur.add_argument("annotations")
    cur.add_argument("--ngroups", type=int, required=True)
    cur.add_argument("--beta", type=float, default=1.0)
    cur.add_argument("--min-classes", type=int, default=1)
    cur.add_argument("--k-test", type=int, default=0, help="test images per class (0: no split)")
    cur.add_argument("--seed", type=int, default=0)
    cur.add_argument("--minority-below", type=int, default=200)
    cur.add_argument("--majority-above", type=int, default=900)
    cur.add_argument("--out-dir", required=True)
    cur.set_defaults(func=cmd_curate)

    run = sub.add_parser("run", help="train online with a replay method and write episode logs")
    run.add_argument("--stream")
    run.add_argument("--test", help="held-out JSON-Lines set (default: evaluate on the stream)")
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--rho", type=float)
    run.add_argument("--memory-size", type=int)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--replay-batch", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--threshold", type=float)
    run.add_argument("--hidden", type=int, help="hidden units (0: linear model)")
    run.add_argument("--config", help="YAML/JSON overrides; flags take precedence")
    run.add_argument("--from-manifest", help="repeat the run described by a manifest.json")
    run.add_argument("--sweep-rho", help="start:stop:step, e.g. --sweep-rho=-1:1:0.25")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--no-trace", action="store_true", help="skip the per-step memory trace")
    run.add_argument("--checkpoint-snapshots", action="store_true")
    run.add_argument("--snapshot-features", action="store_true")
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, yaml.YAMLError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as err:  # noqa: BLE001
        print(f"runtime error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
